//! Minimal neural-network substrate on top of candle's CPU tensors.
//!
//! Convolutions are routed through an im2col + GEMM composite built from
//! differentiable tensor ops; candle's direct conv kernels are an order of
//! magnitude slower on CPU for the shapes used here.

pub mod layers;
pub mod ops;
pub mod optim;
pub mod rng;

pub use layers::{BatchNorm1d, Conv2d, ConvTranspose2d, Dropout, Linear, ParamStore};
pub use ops::{conv2d, conv_transpose2d, leaky_relu, max_pool2x2};
pub use optim::{Adam, Optimizer, Sgd};
pub use rng::TensorRng;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// Uniform Xavier/Glorot bound for a weight tensor: sqrt(6) / sqrt(fan_in + fan_out).
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0f64).sqrt() / ((fan_in + fan_out) as f64).sqrt()
}

/// Xavier-uniform initialized tensor. `shape` is interpreted per layer kind:
/// `[out, in]` for dense weights and `[out_c, in_c, kh, kw]` for kernels.
pub fn xavier_init(rng: &mut TensorRng, shape: &[usize], dev: &Device, dtype: DType) -> Result<Tensor> {
    let (fan_in, fan_out) = match shape {
        [out, inp] => (*inp, *out),
        [out_c, in_c, kh, kw] => (in_c * kh * kw, out_c * kh * kw),
        _ => {
            return Err(Error::InvalidParameter(format!(
                "xavier_init expects rank-2 or rank-4 shape, got {shape:?}"
            )))
        }
    };
    let bound = xavier_bound(fan_in, fan_out);
    rng.uniform(-bound, bound, shape, dev, dtype)
}

/// Fails with `NumericalDivergence` when the scalar is NaN or infinite.
pub fn check_finite(loss: f64, context: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NumericalDivergence(format!("{context}: loss = {loss}")))
    }
}

pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(match t.dtype() {
        DType::F64 => t.to_scalar::<f64>()?,
        _ => t.to_scalar::<f32>()? as f64,
    })
}
