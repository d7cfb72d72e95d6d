//! Layers with explicit parameter registration.
//!
//! Parameters live in a `ParamStore`: an ordered list of named `Var`s. The
//! store is the unit the optimizers and the importance-based strategies
//! operate on (anchors, Fisher diagonals, path integrals are all aligned with
//! its ordering).

use candle_core::{DType, Device, Tensor, Var};

use super::ops;
use super::rng::TensorRng;
use crate::error::{Error, Result};

#[derive(Default)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<Var> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::InvalidParameter(format!("duplicate parameter {name}")));
        }
        let var = Var::from_tensor(&value)?;
        self.entries.push((name.to_string(), var.clone()));
        Ok(var)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Detached copies of all parameter tensors, in registration order.
    pub fn snapshot(&self) -> Result<Vec<Tensor>> {
        self.entries
            .iter()
            .map(|(_, v)| Ok(v.as_tensor().copy()?))
            .collect()
    }

    pub fn load(&self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.entries.len() {
            return Err(Error::InvalidParameter(format!(
                "parameter count mismatch: {} vs {}",
                values.len(),
                self.entries.len()
            )));
        }
        for ((_, var), value) in self.entries.iter().zip(values) {
            var.set(value)?;
        }
        Ok(())
    }

    /// FNV-1a digest over the little-endian f32 bytes of every parameter.
    pub fn digest(&self) -> Result<u64> {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, v) in &self.entries {
            let data: Vec<f32> = v.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
            for x in data {
                for byte in x.to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        Ok(h)
    }
}

pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut TensorRng, dev: &Device, dtype: DType) -> Result<Self> {
        let w = super::xavier_init(rng, &[out_dim, in_dim], dev, dtype)?;
        let b = Tensor::zeros(out_dim, dtype, dev)?;
        Ok(Self {
            weight: store.register(&format!("{name}.weight"), w)?,
            bias: store.register(&format!("{name}.bias"), b)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight.t()?)?;
        Ok(y.broadcast_add(self.bias.as_tensor())?)
    }
}

pub struct Conv2d {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, rng: &mut TensorRng, dev: &Device, dtype: DType) -> Result<Self> {
        let w = super::xavier_init(rng, &[out_c, in_c, k, k], dev, dtype)?;
        let b = Tensor::zeros(out_c, dtype, dev)?;
        Ok(Self {
            weight: store.register(&format!("{name}.weight"), w)?,
            bias: store.register(&format!("{name}.bias"), b)?,
            stride,
            pad,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv2d(x, self.weight.as_tensor(), Some(self.bias.as_tensor()), self.stride, self.pad)
    }
}

pub struct ConvTranspose2d {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(store: &mut ParamStore, name: &str, in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize, rng: &mut TensorRng, dev: &Device, dtype: DType) -> Result<Self> {
        let w = super::xavier_init(rng, &[in_c, out_c, k, k], dev, dtype)?;
        let b = Tensor::zeros(out_c, dtype, dev)?;
        Ok(Self {
            weight: store.register(&format!("{name}.weight"), w)?,
            bias: store.register(&format!("{name}.bias"), b)?,
            stride,
            pad,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv_transpose2d(x, self.weight.as_tensor(), Some(self.bias.as_tensor()), self.stride, self.pad)
    }
}

/// 1-D batch normalization with running statistics (torch semantics:
/// biased variance for normalization, unbiased for the running estimate).
pub struct BatchNorm1d {
    pub gamma: Var,
    pub beta: Var,
    running_mean: Tensor,
    running_var: Tensor,
    momentum: f64,
    eps: f64,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, dev: &Device, dtype: DType) -> Result<Self> {
        Ok(Self {
            gamma: store.register(&format!("{name}.gamma"), Tensor::ones(dim, dtype, dev)?)?,
            beta: store.register(&format!("{name}.beta"), Tensor::zeros(dim, dtype, dev)?)?,
            running_mean: Tensor::zeros(dim, dtype, dev)?,
            running_var: Tensor::ones(dim, dtype, dev)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (b, _) = x.dims2()?;
        let (mean, var) = if train {
            let mean = x.mean(0)?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean(0)?;
            if b > 1 {
                let unbiased = (&var * (b as f64 / (b as f64 - 1.0)))?;
                self.running_mean = ((&self.running_mean * (1.0 - self.momentum))? + (&mean * self.momentum)?.detach())?;
                self.running_var = ((&self.running_var * (1.0 - self.momentum))? + (&unbiased * self.momentum)?.detach())?;
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let norm = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(norm
            .broadcast_mul(self.gamma.as_tensor())?
            .broadcast_add(self.beta.as_tensor())?)
    }

    pub fn running_state(&self) -> (Tensor, Tensor) {
        (self.running_mean.clone(), self.running_var.clone())
    }

    pub fn set_running_state(&mut self, mean: Tensor, var: Tensor) {
        self.running_mean = mean;
        self.running_var = var;
    }
}

/// Inverted dropout; identity in eval mode.
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        Self { p }
    }

    pub fn forward(&self, x: &Tensor, train: bool, rng: &mut TensorRng) -> Result<Tensor> {
        if !train || self.p == 0.0 {
            return Ok(x.clone());
        }
        let mask = rng.dropout_mask(self.p, x.dims(), x.device(), x.dtype())?;
        Ok((x * mask)?)
    }
}
