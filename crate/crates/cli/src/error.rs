use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, missing files, unloadable scenarios or checkpoints.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] amod_core::Error),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Process exit status: 2 for configuration problems, 3 when the
    /// simulation or an optimizer broke an invariant, 1 for output failures.
    pub fn exit_code(&self) -> i32 {
        use amod_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(
                E::Simulation(_) | E::InvalidAction { .. } | E::MalformedNetwork(_) | E::Unbounded,
            ) => 3,
            CliError::Core(_) => 2,
            CliError::Io { .. } | CliError::Csv(_) => 1,
        }
    }
}

/// Tags a core error raised while loading an input as a config error.
pub(crate) fn loading<T>(what: &str, r: amod_core::Result<T>) -> Result<T> {
    r.map_err(|e| CliError::Config(format!("{what}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use amod_core::Error as E;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::config("x").exit_code(), 2);
        assert_eq!(CliError::Core(E::Simulation("lost a vehicle".into())).exit_code(), 3);
        let bad = E::InvalidAction {
            step: 3,
            reason: "sum 1.2".into(),
        };
        assert_eq!(CliError::Core(bad).exit_code(), 3);
        assert_eq!(CliError::Core(E::Checkpoint("truncated".into())).exit_code(), 2);
        assert_eq!(loading::<()>("f", Err(E::Simulation("x".into()))).unwrap_err().exit_code(), 2);
    }
}
