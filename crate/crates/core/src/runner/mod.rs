//! Experiment orchestration: configs, seeded runs filling the accuracy
//! matrix, sweeps over the lambda grid, persistence, and plot emission.

pub mod config;
pub mod experiment;
pub mod persist;
pub mod plots;
pub mod report;
pub mod sweep;

pub use config::{
    EvalGranularity, EvaluationSpec, ExperimentConfig, GenMetricWhen, ModelKind, ModelSpec,
    ScenarioSpec, ScenarioSpecKind, TrainingSpec,
};
pub use experiment::{build_continuum, ensure_expert, run_experiment};
pub use persist::{
    classifier_from_checkpoint, classifier_to_checkpoint, generator_from_checkpoint,
    generator_to_checkpoint,
};
pub use plots::{emit_plots, sample_grid_png};
pub use report::{CurvePoint, RunReport, RunStatus, StreamMetrics};
pub use sweep::{format_table, sweep, SweepResult};
