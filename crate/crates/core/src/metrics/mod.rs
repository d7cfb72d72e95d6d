//! Quantitative evaluation: accuracy-matrix analytics, resource metrics, and
//! generative-quality metrics (FID, IS analog, fitting capacity).

pub mod eval;
pub mod fic;
pub mod gen;
pub mod matrix;

pub use eval::{accuracy, features_of_samples, features_of_synth, predictive_rows};
pub use fic::{fitting_capacity, k_shot_curve, train_classifier, Annotator, FicConfig, OptSpec};
pub use gen::{fid, is_analog};
pub use matrix::{
    acc_metric, bwt_suite, ce_metric, classical_accuracy, forgetting_ratio, fwt_metric, lca_suite,
    ms_metric, overall_m, AccuracyMatrix, ResourceLedger,
};

use serde::{Deserialize, Serialize};

/// Generative-quality report at one evaluation point.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct GenEvalReport {
    pub task: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub is_analog: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitting_capacity: Option<f64>,
    pub annotator: String,
}
