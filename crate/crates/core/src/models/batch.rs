//! Batch assembly over mixed pools of raw corpus samples and generated
//! samples. Pixels stay u8 (real) / unit-range f32 (synthetic) in memory and
//! are normalized per consumer at batch time.

use candle_core::{Device, Tensor};

use crate::data::{Normalization, SampleSet, IMAGE_PIXELS};
use crate::error::Result;
use crate::nn::TensorRng;

/// Generated samples, pixels stored in the canonical [0, 1] range.
#[derive(Debug, Clone, Default)]
pub struct SynthSet {
    pub images: Vec<f32>,
    pub labels: Vec<u16>,
}

impl SynthSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * IMAGE_PIXELS..(i + 1) * IMAGE_PIXELS]
    }

    /// Appends a batch of generated images given in `norm` range.
    pub fn push_tensor(&mut self, images: &Tensor, labels: &[u16], norm: Normalization) -> Result<()> {
        let flat: Vec<f32> = images.flatten_all()?.to_vec1()?;
        self.images.extend(flat.iter().map(|&v| norm.to_unit(v)));
        self.labels.extend_from_slice(labels);
        Ok(())
    }
}

fn unit_to(norm: Normalization, v: f32) -> f32 {
    match norm {
        Normalization::UnitInterval => v,
        Normalization::SignedUnit => v * 2.0 - 1.0,
    }
}

/// Real samples to a `[n, 1, 28, 28]` tensor under `norm`.
pub fn samples_to_tensor(set: &SampleSet, indices: &[usize], norm: Normalization, dev: &Device) -> Result<Tensor> {
    let mut data = Vec::with_capacity(indices.len() * IMAGE_PIXELS);
    for &i in indices {
        data.extend(set.image(i).iter().map(|&b| norm.apply(b)));
    }
    Ok(Tensor::from_vec(data, (indices.len(), 1, 28, 28), dev)?)
}

/// A training pool: the real samples of the active task plus whatever the
/// strategy injected (rehearsal copies arrive as part of `real`; generated
/// replay arrives as `synth`).
pub struct TrainPool<'a> {
    pub real: &'a SampleSet,
    pub synth: Option<&'a SynthSet>,
}

impl<'a> TrainPool<'a> {
    pub fn new(real: &'a SampleSet, synth: Option<&'a SynthSet>) -> Self {
        Self { real, synth }
    }

    pub fn len(&self) -> usize {
        self.real.len() + self.synth.map_or(0, |s| s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Builds one batch under `norm`. Indices address the concatenation
    /// real ++ synth.
    pub fn batch(&self, indices: &[u32], norm: Normalization, dev: &Device) -> Result<(Tensor, Vec<u16>)> {
        let n_real = self.real.len();
        let mut data = Vec::with_capacity(indices.len() * IMAGE_PIXELS);
        let mut labels = Vec::with_capacity(indices.len());
        for &gi in indices {
            let gi = gi as usize;
            if gi < n_real {
                data.extend(self.real.image(gi).iter().map(|&b| norm.apply(b)));
                labels.push(self.real.labels[gi]);
            } else {
                let s = self.synth.expect("index beyond real pool without synth pool");
                let si = gi - n_real;
                data.extend(s.image(si).iter().map(|&v| unit_to(norm, v)));
                labels.push(s.labels[si]);
            }
        }
        let x = Tensor::from_vec(data, (indices.len(), 1, 28, 28), dev)?;
        Ok((x, labels))
    }
}

/// Deterministic shuffled mini-batch index stream for one epoch.
pub struct EpochIter {
    order: Vec<u32>,
    batch_size: usize,
    pos: usize,
}

impl EpochIter {
    /// Shuffles `0..n` with `rng`; yields consecutive chunks of
    /// `batch_size`, dropping a trailing chunk of size < 2 (batch-norm needs
    /// at least two samples).
    pub fn new(n: usize, batch_size: usize, rng: &mut TensorRng) -> Self {
        let order: Vec<u32> = rng.permutation(n).into_iter().map(|v| v as u32).collect();
        Self { order, batch_size, pos: 0 }
    }

    pub fn sequential(n: usize, batch_size: usize) -> Self {
        Self { order: (0..n as u32).collect(), batch_size, pos: 0 }
    }
}

impl Iterator for EpochIter {
    type Item = Vec<u32>;

    fn next(&mut self) -> Option<Vec<u32>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let chunk = self.order[self.pos..end].to_vec();
        self.pos = end;
        if chunk.len() < 2 && self.order.len() >= 2 {
            return None;
        }
        Some(chunk)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set() -> SampleSet {
        let mut s = SampleSet::default();
        for c in 0..4u16 {
            let mut img = vec![0u8; IMAGE_PIXELS];
            img[0] = 255;
            img[1] = c as u8;
            s.push(&img, c);
        }
        s
    }

    #[test]
    fn batch_normalizes_real_pixels() {
        let set = tiny_set();
        let pool = TrainPool::new(&set, None);
        let (x, labels) = pool.batch(&[0, 1], Normalization::SignedUnit, &Device::Cpu).unwrap();
        assert_eq!(labels, vec![0, 1]);
        let v: Vec<f32> = x.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[2], -1.0);
    }

    #[test]
    fn mixed_pool_indexes_synth_tail() {
        let set = tiny_set();
        let mut synth = SynthSet::default();
        synth.images.extend(std::iter::repeat(0.5f32).take(IMAGE_PIXELS));
        synth.labels.push(9);
        let pool = TrainPool::new(&set, Some(&synth));
        assert_eq!(pool.len(), 5);
        let (x, labels) = pool.batch(&[4, 0], Normalization::UnitInterval, &Device::Cpu).unwrap();
        assert_eq!(labels, vec![9, 0]);
        let v: Vec<f32> = x.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(v[0], 0.5);
    }

    #[test]
    fn epoch_iter_covers_everything_once() {
        let mut rng = TensorRng::new(5);
        let mut seen = vec![0u8; 103];
        for chunk in EpochIter::new(103, 10, &mut rng) {
            for i in chunk {
                seen[i as usize] += 1;
            }
        }
        // final chunk of size 3 kept, everything visited exactly once
        assert!(seen.iter().filter(|&&c| c == 1).count() >= 100);
    }

    #[test]
    fn synth_roundtrip_through_signed_range() {
        let mut synth = SynthSet::default();
        let img = Tensor::from_vec(vec![0.0f32; IMAGE_PIXELS], (1, 1, 28, 28), &Device::Cpu).unwrap();
        synth.push_tensor(&img, &[3], Normalization::SignedUnit).unwrap();
        // signed 0.0 -> unit 0.5
        assert!((synth.image(0)[0] - 0.5).abs() < 1e-7);
    }
}
