//! Accuracy-matrix analytics and resource metrics.
//!
//! `R[i][j]` is the test accuracy on task `j` after finishing training on
//! task `i`. Row `i` is written exactly once, right after task `i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AccuracyMatrix {
    n_tasks: usize,
    rows: Vec<Option<Vec<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(n_tasks: usize) -> Self {
        Self { n_tasks, rows: vec![None; n_tasks] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut m = Self::new(n);
        for (i, row) in rows.into_iter().enumerate() {
            m.set_row(i, row)?;
        }
        Ok(m)
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn set_row(&mut self, i: usize, row: Vec<f64>) -> Result<()> {
        if i >= self.n_tasks {
            return Err(Error::InvalidMatrix(format!("row {i} of {}", self.n_tasks)));
        }
        if row.len() != self.n_tasks {
            return Err(Error::InvalidMatrix(format!(
                "row has {} entries, want {}",
                row.len(),
                self.n_tasks
            )));
        }
        if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidMatrix("accuracy outside [0, 1]".into()));
        }
        if self.rows[i].is_some() {
            return Err(Error::InvalidMatrix(format!("row {i} written twice")));
        }
        self.rows[i] = Some(row);
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(|r| r.is_some())
    }

    pub fn get(&self, i: usize, j: usize) -> Result<f64> {
        self.rows
            .get(i)
            .and_then(|r| r.as_ref())
            .and_then(|r| r.get(j).copied())
            .ok_or_else(|| Error::IncompleteMatrix(format!("entry ({i}, {j}) missing")))
    }

    fn complete(&self) -> Result<Vec<&Vec<f64>>> {
        if !self.is_complete() {
            return Err(Error::IncompleteMatrix("matrix has unwritten rows".into()));
        }
        Ok(self.rows.iter().map(|r| r.as_ref().unwrap()).collect())
    }

    /// Row-major flattening for reports.
    pub fn to_flat(&self) -> Vec<f64> {
        self.rows
            .iter()
            .flat_map(|r| r.clone().unwrap_or_else(|| vec![f64::NAN; self.n_tasks]))
            .collect()
    }
}

/// Classical accuracy `A`: mean of the diagonal.
pub fn classical_accuracy(m: &AccuracyMatrix) -> Result<f64> {
    let rows = m.complete()?;
    let n = m.n_tasks();
    Ok((0..n).map(|i| rows[i][i]).sum::<f64>() / n as f64)
}

/// `ACC`: mean over the diagonal and everything below it.
pub fn acc_metric(m: &AccuracyMatrix) -> Result<f64> {
    let rows = m.complete()?;
    let n = m.n_tasks();
    let sum: f64 = (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).map(|(i, j)| rows[i][j]).sum();
    Ok(sum / (n * (n + 1)) as f64 * 2.0)
}

/// `(BWT, REM, BWT+)`.
pub fn bwt_suite(m: &AccuracyMatrix) -> Result<(f64, f64, f64)> {
    let rows = m.complete()?;
    let n = m.n_tasks();
    if n < 2 {
        return Err(Error::InvalidMatrix("BWT needs at least 2 tasks".into()));
    }
    let sum: f64 = (1..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| rows[i][j] - rows[j][j])
        .sum();
    let bwt = sum / (n * (n - 1)) as f64 * 2.0;
    let rem = 1.0 - bwt.min(0.0).abs();
    let bwt_plus = bwt.max(0.0);
    Ok((bwt, rem, bwt_plus))
}

/// `FWT`: mean over entries strictly above the diagonal.
pub fn fwt_metric(m: &AccuracyMatrix) -> Result<f64> {
    let rows = m.complete()?;
    let n = m.n_tasks();
    if n < 2 {
        return Err(Error::InvalidMatrix("FWT needs at least 2 tasks".into()));
    }
    let sum: f64 = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| rows[i][j])
        .sum();
    Ok(sum / (n * (n - 1)) as f64 * 2.0)
}

/// Overall performance `M`: mean of `R[i][i] / R_offline[i]`; may exceed 1.
pub fn overall_m(diag: &[f64], offline_diag: &[f64]) -> Result<f64> {
    if diag.len() != offline_diag.len() || diag.is_empty() {
        return Err(Error::InvalidMatrix("diagonal length mismatch".into()));
    }
    if offline_diag.iter().any(|&v| v == 0.0) {
        return Err(Error::SingularReference("offline accuracy of 0".into()));
    }
    Ok(diag.iter().zip(offline_diag).map(|(a, c)| a / c).sum::<f64>() / diag.len() as f64)
}

/// Forgetting ratio `rho`: mean over all (i, j) of
/// `(R[i][j] - R_rand[j]) / (R_off[i][j] - R_rand[j]) - 1`.
pub fn forgetting_ratio(m: &AccuracyMatrix, offline: &AccuracyMatrix, random: &[f64]) -> Result<f64> {
    let rows = m.complete()?;
    let off = offline.complete()?;
    let n = m.n_tasks();
    if offline.n_tasks() != n || random.len() != n {
        return Err(Error::InvalidMatrix("misaligned reference grids".into()));
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let denom = off[i][j] - random[j];
            if denom == 0.0 {
                return Err(Error::SingularReference(format!(
                    "offline equals random baseline at ({i}, {j})"
                )));
            }
            acc += (rows[i][j] - random[j]) / denom - 1.0;
        }
    }
    Ok(acc / (n * n) as f64)
}

/// Batch-level learning-curve suite.
///
/// `a[i][k][j]` is the accuracy on task `j` after mini-batch `k` of task `i`.
/// Returns the `Z_b` curve for `b` in `0..=beta`, `LCA_beta`, and the
/// forgetting measures `f[k][j]` for `j < k`.
pub fn lca_suite(a: &[Vec<Vec<f64>>], beta: usize) -> Result<(Vec<f64>, f64, Vec<Vec<f64>>)> {
    let n = a.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty accuracy tensor".into()));
    }
    let min_batches = a.iter().map(|t| t.len()).min().unwrap_or(0);
    if beta + 1 > min_batches {
        return Err(Error::InvalidParameter(format!(
            "beta {beta} exceeds the {min_batches} recorded batches"
        )));
    }
    let z: Vec<f64> = (0..=beta)
        .map(|b| (0..n).map(|i| a[i][b][i]).sum::<f64>() / n as f64)
        .collect();
    let lca = z.iter().sum::<f64>() / (beta + 1) as f64;

    // f[k][j]: drop on task j after finishing task k, relative to the best
    // end-of-task accuracy any earlier task achieved on j.
    let mut f = Vec::with_capacity(n);
    for k in 0..n {
        let mut row = Vec::with_capacity(k);
        for j in 0..k {
            let best_before = (0..k)
                .map(|l| a[l][a[l].len() - 1][j])
                .fold(f64::NEG_INFINITY, f64::max);
            let now = a[k][a[k].len() - 1][j];
            row.push(best_before - now);
        }
        f.push(row);
    }
    Ok((z, lca, f))
}

/// Per-task resource bookkeeping backing the MS and CE metrics.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ResourceLedger {
    /// Parameter memory of the model after task i, bytes.
    pub model_mem: Vec<f64>,
    /// External stored-data memory after task i, bytes.
    pub data_mem: Vec<f64>,
    /// Mul-add operations spent learning task i.
    pub ops_train: Vec<f64>,
    /// Mul-adds of a single forward+backward pass over task i's train set.
    pub ops_fwbw: Vec<f64>,
    /// Epoch scaling factor.
    pub epsilon: f64,
}

impl ResourceLedger {
    fn check(&self) -> Result<usize> {
        let n = self.model_mem.len();
        if n == 0 || self.data_mem.len() != n || self.ops_train.len() != n || self.ops_fwbw.len() != n {
            return Err(Error::InvalidLedger("misaligned ledger columns".into()));
        }
        if self.model_mem.iter().any(|&v| v <= 0.0) || self.ops_train.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidLedger("non-positive ledger entries".into()));
        }
        Ok(n)
    }
}

/// Memory-size metric `MS`.
pub fn ms_metric(ledger: &ResourceLedger) -> Result<f64> {
    let n = ledger.check()?;
    let base = ledger.model_mem[0];
    let sum: f64 = (0..n)
        .map(|i| base / (ledger.model_mem[i] + ledger.data_mem[i]))
        .sum();
    Ok((sum / n as f64).min(1.0))
}

/// Compute-efficiency metric `CE`.
pub fn ce_metric(ledger: &ResourceLedger) -> Result<f64> {
    let n = ledger.check()?;
    let sum: f64 = (0..n)
        .map(|i| ledger.ops_fwbw[i] * ledger.epsilon / (1.0 + ledger.ops_train[i]))
        .sum();
    Ok((sum / n as f64).min(1.0))
}
