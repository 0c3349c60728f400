//! Recurrent graph actor-critic, A2C, training modes and baseline controllers.

pub mod a2c;
pub mod model;
pub mod policies;
pub mod train;

pub use a2c::{a2c_loss, discounted_returns, A2cConfig, A2cLosses, Learner, RewardScaler, RolloutBuffer};
pub use model::{
    pooling_matrix, ActorCritic, HiddenBank, ModelConfig, PolicyOutput, StepVars, TrainingMode,
    ALPHA_FLOOR, DEFAULT_HIDDEN,
};
pub use policies::{
    baseline_policy, ActionMode, BaselineKind, EqualDistribution, MpcForecast, MpcOracle, RandomPolicy,
    RecurrentPolicy,
};
pub use train::{
    fine_tune, meta_train, meta_train_from, train_standard, EpisodeLog, Hook, HookEvent, TrainConfig,
    TrainOutput, TrialLog,
};
