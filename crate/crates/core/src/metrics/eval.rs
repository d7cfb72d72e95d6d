//! Shared evaluation helpers: batched accuracy, predictive distributions,
//! and feature extraction for FID.

use candle_core::{DType, Device, Tensor};
use nalgebra::DMatrix;

use crate::data::{Normalization, SampleSet};
use crate::error::Result;
use crate::models::batch::{samples_to_tensor, SynthSet};
use crate::models::classifier::{Classifier, ClassifierCnn};

pub const EVAL_BATCH: usize = 256;

/// Accuracy of `clf` on `set`. When `mask` is given (permanent-labels
/// regime) the argmax is restricted to those head classes.
pub fn accuracy(clf: &mut Classifier, set: &SampleSet, dev: &Device, mask: Option<&[u16]>) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let mut rng = crate::nn::TensorRng::new(0);
    for start in (0..set.len()).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(set.len())).collect();
        let x = samples_to_tensor(set, &idx, Normalization::UnitInterval, dev)?;
        let lp = clf.forward(&x, false, &mut rng)?;
        let preds: Vec<u16> = match mask {
            None => {
                let ids = lp.argmax(1)?.to_dtype(DType::U32)?.to_vec1::<u32>()?;
                ids.into_iter().map(|v| v as u16).collect()
            }
            Some(classes) => {
                let cols: Vec<u32> = classes.iter().map(|&c| c as u32).collect();
                let cols = Tensor::from_vec(cols, classes.len(), dev)?;
                let sub = lp.index_select(&cols, 1)?;
                let ids = sub.argmax(1)?.to_dtype(DType::U32)?.to_vec1::<u32>()?;
                ids.into_iter().map(|v| classes[v as usize]).collect()
            }
        };
        for (k, &i) in idx.iter().enumerate() {
            if preds[k] == set.labels[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Predictive distributions (softmax rows) of `clf` on generated images.
pub fn predictive_rows(clf: &mut Classifier, images: &SynthSet, dev: &Device) -> Result<DMatrix<f64>> {
    let n = images.len();
    let k = clf.n_classes();
    let mut out = DMatrix::zeros(n, k);
    let mut rng = crate::nn::TensorRng::new(0);
    for start in (0..n).step_by(EVAL_BATCH) {
        let end = (start + EVAL_BATCH).min(n);
        let data: Vec<f32> = images.images[start * 784..end * 784].to_vec();
        let x = Tensor::from_vec(data, (end - start, 1, 28, 28), dev)?;
        let probs = clf.forward(&x, false, &mut rng)?.exp()?;
        let rows: Vec<f32> = probs.flatten_all()?.to_vec1()?;
        for i in 0..end - start {
            for j in 0..k {
                out[(start + i, j)] = rows[i * k + j] as f64;
            }
        }
    }
    Ok(out)
}

/// Penultimate 50-d features of the pinned CNN for a real sample set.
pub fn features_of_samples(extractor: &mut ClassifierCnn, set: &SampleSet, dev: &Device) -> Result<DMatrix<f64>> {
    let n = set.len();
    let mut out = DMatrix::zeros(n, 50);
    for start in (0..n).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(n)).collect();
        let x = samples_to_tensor(set, &idx, Normalization::UnitInterval, dev)?;
        let f = extractor.features(&x)?;
        let rows: Vec<f32> = f.flatten_all()?.to_vec1()?;
        for i in 0..idx.len() {
            for j in 0..50 {
                out[(start + i, j)] = rows[i * 50 + j] as f64;
            }
        }
    }
    Ok(out)
}

/// Same, for generated images stored in the unit range.
pub fn features_of_synth(extractor: &mut ClassifierCnn, images: &SynthSet, dev: &Device) -> Result<DMatrix<f64>> {
    let n = images.len();
    let mut out = DMatrix::zeros(n, 50);
    for start in (0..n).step_by(EVAL_BATCH) {
        let end = (start + EVAL_BATCH).min(n);
        let data: Vec<f32> = images.images[start * 784..end * 784].to_vec();
        let x = Tensor::from_vec(data, (end - start, 1, 28, 28), dev)?;
        let f = extractor.features(&x)?;
        let rows: Vec<f32> = f.flatten_all()?.to_vec1()?;
        for i in 0..end - start {
            for j in 0..50 {
                out[(start + i, j)] = rows[i * 50 + j] as f64;
            }
        }
    }
    Ok(out)
}
