//! Generative-quality metrics: Frechet distance between Gaussian feature
//! fits, and the inception-score analog computed from an expert classifier's
//! predictive distributions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sample mean and (1/(n-1)) covariance of row-stacked features.
fn moments(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let d = x.ncols();
    let mut mean = DVector::zeros(d);
    for i in 0..n {
        mean += x.row(i).transpose();
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let c = x.row(i).transpose() - &mean;
        cov += &c * c.transpose();
    }
    if n > 1 {
        cov /= (n - 1) as f64;
    }
    (mean, cov)
}

/// Frechet distance between Gaussian fits of two feature sets:
/// `||mu_a - mu_b||^2 + Tr(C_a + C_b - 2 (C_a C_b)^(1/2))`.
///
/// The matrix square root is taken through the symmetric eigendecomposition
/// of `(P + P^T)/2` with `P = C_a C_b`; negative eigenvalues are clamped to
/// zero. Symmetrizing makes the distance exactly symmetric in its arguments.
pub fn fid(features_a: &DMatrix<f64>, features_b: &DMatrix<f64>) -> Result<f64> {
    if features_a.ncols() != features_b.ncols() {
        return Err(Error::InvalidParameter(format!(
            "feature dims differ: {} vs {}",
            features_a.ncols(),
            features_b.ncols()
        )));
    }
    if features_a.nrows() < 2 || features_b.nrows() < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples per side".into()));
    }
    let (mu_a, c_a) = moments(features_a);
    let (mu_b, c_b) = moments(features_b);
    let diff = &mu_a - &mu_b;
    let p = &c_a * &c_b;
    let sym = (&p + p.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let sqrt_trace: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum();
    Ok(diff.norm_squared() + c_a.trace() + c_b.trace() - 2.0 * sqrt_trace)
}

/// Inception-score analog: `exp(E_x[KL(P(Y|x) || P(Y))])` where `P(Y)` is the
/// mean predictive row. Rows must be probability distributions.
pub fn is_analog(predicted: &DMatrix<f64>) -> Result<f64> {
    let n = predicted.nrows();
    let k = predicted.ncols();
    if n == 0 || k == 0 {
        return Err(Error::InvalidParameter("empty prediction matrix".into()));
    }
    for i in 0..n {
        let row_sum: f64 = predicted.row(i).iter().sum();
        if (row_sum - 1.0).abs() > 1e-6 || predicted.row(i).iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "row {i} is not a distribution (sum {row_sum})"
            )));
        }
    }
    let mut marginal = DVector::zeros(k);
    for i in 0..n {
        marginal += predicted.row(i).transpose();
    }
    marginal /= n as f64;
    let mut mean_kl = 0.0;
    for i in 0..n {
        let mut kl = 0.0;
        for j in 0..k {
            let p = predicted[(i, j)];
            if p > 0.0 {
                kl += p * (p / marginal[j]).ln();
            }
        }
        mean_kl += kl;
    }
    mean_kl /= n as f64;
    Ok(mean_kl.exp())
}
