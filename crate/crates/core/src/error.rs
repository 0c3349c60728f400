use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    /// A scenario or disturbance field broke one of its invariants.
    #[error("invalid {field}{index}: {reason}", index = .index.as_deref().map(|s| format!(" at {s}")).unwrap_or_default())]
    Invariant {
        field: String,
        index: Option<String>,
        reason: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("malformed flow network: {0}")]
    MalformedNetwork(String),

    #[error("flow problem is unbounded")]
    Unbounded,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("simulation invariant violated: {0}")]
    Simulation(String),

    #[error("invalid action at step {step}: {reason}")]
    InvalidAction { step: usize, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn invariant(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invariant {
            field: field.into(),
            index: None,
            reason: reason.into(),
        }
    }

    pub(crate) fn invariant_at(
        field: impl Into<String>,
        index: impl Into<String>,
        reason: impl Into<String>,
    ) -> Self {
        Error::Invariant {
            field: field.into(),
            index: Some(index.into()),
            reason: reason.into(),
        }
    }
}
