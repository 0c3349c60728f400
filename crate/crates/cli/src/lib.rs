//! Experiment runner for the AMoD rebalancing toolkit: training, evaluation,
//! disturbance studies and task-count sensitivity, with CSV and JSON reports.

pub mod app;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod output;
pub mod sensitivity;
pub mod source;

pub use app::{run, Command, ExperimentConfig};
pub use error::{CliError, Result};
pub use eval::{
    aggregate, parse_policies, run_disturbance, run_eval, trial_seeds, Aggregate, AlignmentRow,
    EpisodeRow, EvalConfig, EvalReport, PolicyKind, PolicySpec, SeedRow,
};
pub use metrics::{cosine_alignment, MeanStd};
pub use sensitivity::{nested_pools, run_sensitivity, SensitivityConfig, SensitivityReport, SensitivityRow};
