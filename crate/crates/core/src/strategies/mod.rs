//! Continual-learning strategy engine: how a model trains across a
//! continuum and what memory it carries between tasks.

pub mod engine;
pub mod importance;
pub mod replay;

pub use engine::{
    train_task, train_task_hooked, EpochHook, OptimizerSpec, StrategyKind, StrategyState,
    TaskMetrics, TaskModels, TrainConfig, CRITIC_STEPS_WASSERSTEIN, LAMBDA_GRID, WGAN_CLIP,
    WGAN_GP_LAMBDA,
};
pub use importance::{fisher_diag_classifier, fisher_diag_generator, ImportanceKind, ImportanceState};
pub use replay::{clone_classifier, Coreset, ReplaySnapshot};
