//! Deterministic tensor sampling.
//!
//! All randomness flows through a `TensorRng` seeded per run; candle's own
//! global RNG is never used, so identical (config, seed) pairs produce
//! bitwise-identical streams regardless of ambient state.

use candle_core::{DType, Device, Tensor};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub struct TensorRng(ChaCha12Rng);

impl TensorRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha12Rng::seed_from_u64(seed))
    }

    /// Child stream derived from this one; keeps independent consumers
    /// (init, batching, latent draws) from perturbing each other.
    pub fn fork(&mut self, tag: u64) -> Self {
        let mixed = self.0.gen::<u64>() ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        Self(ChaCha12Rng::seed_from_u64(mixed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64, shape: &[usize], dev: &Device, dtype: DType) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        match dtype {
            DType::F64 => {
                let data: Vec<f64> = (0..n).map(|_| self.0.gen_range(lo..hi)).collect();
                Ok(Tensor::from_vec(data, shape, dev)?)
            }
            _ => {
                let data: Vec<f32> = (0..n).map(|_| self.0.gen_range(lo..hi) as f32).collect();
                Ok(Tensor::from_vec(data, shape, dev)?)
            }
        }
    }

    pub fn randn(&mut self, shape: &[usize], dev: &Device, dtype: DType) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        match dtype {
            DType::F64 => {
                let data: Vec<f64> = (0..n).map(|_| self.0.sample(StandardNormal)).collect();
                Ok(Tensor::from_vec(data, shape, dev)?)
            }
            _ => {
                let data: Vec<f32> = (0..n).map(|_| {
                    let x: f64 = self.0.sample(StandardNormal);
                    x as f32
                }).collect();
                Ok(Tensor::from_vec(data, shape, dev)?)
            }
        }
    }

    /// Inverted-dropout mask: entries are 1/keep with probability keep, else 0.
    pub fn dropout_mask(&mut self, p_drop: f64, shape: &[usize], dev: &Device, dtype: DType) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p_drop) {
            return Err(Error::InvalidParameter(format!("dropout p = {p_drop}")));
        }
        let keep = 1.0 - p_drop;
        let n: usize = shape.iter().product();
        let scale = 1.0 / keep;
        match dtype {
            DType::F64 => {
                let data: Vec<f64> = (0..n)
                    .map(|_| if self.0.gen::<f64>() < keep { scale } else { 0.0 })
                    .collect();
                Ok(Tensor::from_vec(data, shape, dev)?)
            }
            _ => {
                let data: Vec<f32> = (0..n)
                    .map(|_| if self.0.gen::<f64>() < keep { scale as f32 } else { 0.0 })
                    .collect();
                Ok(Tensor::from_vec(data, shape, dev)?)
            }
        }
    }

    /// Fisher-Yates shuffled index vector.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.0.gen_range(0..=i);
            idx.swap(i, j);
        }
        idx
    }

    /// One draw from a categorical distribution given per-class probabilities.
    pub fn categorical(&mut self, probs: &[f32]) -> usize {
        let u: f32 = self.0.gen();
        let mut acc = 0.0f32;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        probs.len() - 1
    }

    pub fn gen_range_usize(&mut self, lo: usize, hi: usize) -> usize {
        self.0.gen_range(lo..hi)
    }

    pub fn gen_u64(&mut self) -> u64 {
        self.0.gen()
    }

    pub fn gen_f64(&mut self) -> f64 {
        self.0.gen()
    }
}
