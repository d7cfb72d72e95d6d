//! Run reports: everything a (config, seed) run produced, persisted as
//! versioned JSON with write-rename discipline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::matrix::{self, AccuracyMatrix, ResourceLedger};
use crate::metrics::GenEvalReport;
use crate::scenarios::ScenarioDescriptor;
use crate::strategies::TaskMetrics;

use super::config::ExperimentConfig;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Diverged,
    Aborted,
}

/// One point of an accuracy trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub task: usize,
    pub epoch: usize,
    pub accuracy: f64,
}

/// Stream-level metric suite derived from the accuracy matrix.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct StreamMetrics {
    pub a: f64,
    pub acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bwt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rem: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bwt_plus: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fwt: Option<f64>,
    pub ms: f64,
    pub ce: f64,
    /// Mean of the final row over seen tasks: the stream accuracy the
    /// protocol reports and sweeps select on (computed on validation there).
    pub final_stream_accuracy: f64,
}

impl StreamMetrics {
    pub fn from_matrix(m: &AccuracyMatrix, ledger: &ResourceLedger) -> Result<Self> {
        let n = m.n_tasks();
        let mut final_sum = 0.0;
        for j in 0..n {
            final_sum += m.get(n - 1, j)?;
        }
        let final_stream_accuracy = final_sum / n as f64;
        let (bwt, rem, bwt_plus, fwt) = if n >= 2 {
            let (b, r, p) = matrix::bwt_suite(m)?;
            (Some(b), Some(r), Some(p), Some(matrix::fwt_metric(m)?))
        } else {
            (None, None, None, None)
        };
        Ok(Self {
            a: matrix::classical_accuracy(m)?,
            acc: matrix::acc_metric(m)?,
            bwt,
            rem,
            bwt_plus,
            fwt,
            ms: matrix::ms_metric(ledger)?,
            ce: matrix::ce_metric(ledger)?,
            final_stream_accuracy,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub status: RunStatus,
    pub scenario: ScenarioDescriptor,
    /// Test accuracy matrix R, row-major (classifier-bearing runs).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_matrix: Option<Vec<Vec<f64>>>,
    /// Same grid measured on validation splits (used for selection).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_matrix_val: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stream_metrics: Option<StreamMetrics>,
    /// Accuracy on the cumulative test set over training time.
    pub whole_stream_curve: Vec<CurvePoint>,
    /// Accuracy on task 0's test set over training time.
    pub first_task_curve: Vec<CurvePoint>,
    /// Per-class accuracy after each task (rows: tasks, cols: head classes).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class_accuracy: Option<Vec<Vec<f64>>>,
    pub task_metrics: Vec<TaskMetrics>,
    pub gen_eval: Vec<GenEvalReport>,
    pub ledger: ResourceLedger,
    pub wall_clock_per_task: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extractor_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunReport {
    pub fn accuracy_matrix(&self) -> Result<AccuracyMatrix> {
        let rows = self
            .r_matrix
            .clone()
            .ok_or_else(|| Error::IncompleteMatrix("run has no accuracy matrix".into()))?;
        AccuracyMatrix::from_rows(rows)
    }

    /// results/<hash>/seed<k>/report.json
    pub fn run_dir(out_root: &Path, hash: &str, seed: u64) -> PathBuf {
        out_root.join(hash).join(format!("seed{seed}"))
    }

    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join("report.json")
    }

    /// Atomic persistence: the report is either absent or complete.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let path = Self::path_in(dir);
        let tmp = dir.join(".report.json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let report: RunReport = serde_json::from_slice(&std::fs::read(path)?)?;
        if report.version != REPORT_VERSION {
            return Err(Error::MalformedFile(format!(
                "report version {} unsupported",
                report.version
            )));
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_metrics_from_two_task_matrix() {
        let m = AccuracyMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.8]]).unwrap();
        let ledger = ResourceLedger {
            model_mem: vec![10.0, 10.0],
            data_mem: vec![0.0, 0.0],
            ops_train: vec![10.0, 10.0],
            ops_fwbw: vec![11.0, 11.0],
            epsilon: 1.0,
        };
        let s = StreamMetrics::from_matrix(&m, &ledger).unwrap();
        assert!((s.a - 0.85).abs() < 1e-12);
        assert!((s.final_stream_accuracy - 0.65).abs() < 1e-12);
        assert_eq!(s.bwt, Some(-0.4));
    }
}
