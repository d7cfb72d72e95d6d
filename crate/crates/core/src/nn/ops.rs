//! Differentiable tensor ops built from candle primitives.
//!
//! `conv2d` lowers to im2col + one GEMM per call. `conv_transpose2d` lowers to
//! zero-interleaving followed by a stride-1 `conv2d` with a flipped kernel, so
//! both directions ride on the same fast matmul path and stay differentiable,
//! including through a hand-built input-gradient graph (used by the WGAN-GP
//! penalty, which needs gradients of gradients).

use candle_core::{Tensor, D};

use crate::error::Result;

/// 2D convolution, NCHW, weight `[out_c, in_c, kh, kw]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let (bsz, c, h, wd) = x.dims4()?;
    let (out_c, in_c, kh, kw) = w.dims4()?;
    debug_assert_eq!(c, in_c, "channel mismatch");
    let xp = if pad > 0 {
        x.pad_with_zeros(2, pad, pad)?.pad_with_zeros(3, pad, pad)?
    } else {
        x.clone()
    };
    let hp = h + 2 * pad;
    let wp = wd + 2 * pad;
    let ho = (hp - kh) / stride + 1;
    let wo = (wp - kw) / stride + 1;

    // im2col as one gather over flattened spatial positions: index layout is
    // (tap-row, tap-col) major, (out-row, out-col) minor, matching the
    // row-major flattening of the weight's kernel window
    let mut idx = Vec::with_capacity(kh * kw * ho * wo);
    for di in 0..kh {
        for dj in 0..kw {
            for i in 0..ho {
                for j in 0..wo {
                    idx.push(((di + i * stride) * wp + (dj + j * stride)) as u32);
                }
            }
        }
    }
    let idx = Tensor::from_vec(idx, kh * kw * ho * wo, x.device())?;
    // [B, C, HP*WP] -> gather -> [B, C*k*k, Ho*Wo] -> [C*k*k, B*Ho*Wo]
    let cols = xp
        .reshape((bsz, c, hp * wp))?
        .index_select(&idx, 2)?
        .reshape((bsz, c * kh * kw, ho * wo))?
        .permute((1, 0, 2))?
        .contiguous()?
        .reshape((c * kh * kw, bsz * ho * wo))?;
    let wf = w.reshape((out_c, c * kh * kw))?;
    let y = wf
        .matmul(&cols)?
        .reshape((out_c, bsz, ho * wo))?
        .permute((1, 0, 2))?
        .contiguous()?
        .reshape((bsz, out_c, ho, wo))?;
    Ok(match b {
        Some(b) => y.broadcast_add(&b.reshape((1, out_c, 1, 1))?)?,
        None => y,
    })
}

/// Inserts `stride - 1` zeros between adjacent entries along `dim`.
fn zero_interleave(x: &Tensor, dim: usize, stride: usize) -> Result<Tensor> {
    if stride == 1 {
        return Ok(x.clone());
    }
    let n = x.dims()[dim];
    let zeros = x.zeros_like()?;
    let mut parts = vec![x.clone()];
    for _ in 1..stride {
        parts.push(zeros.clone());
    }
    // [.., n, ..] -> [.., n, stride, ..] -> [.., n*stride, ..], drop the tail zeros
    let stacked = Tensor::stack(&parts, dim + 1)?;
    let mut shape = x.dims().to_vec();
    shape[dim] = n * stride;
    let merged = stacked.reshape(shape)?;
    Ok(merged.narrow(dim, 0, n * stride - (stride - 1))?)
}

/// Spatial flip + in/out channel swap, turning a transposed-conv weight
/// `[in_c, out_c, kh, kw]` into the equivalent direct-conv weight.
fn flip_kernel(w: &Tensor) -> Result<Tensor> {
    let (_, _, kh, kw) = w.dims4()?;
    let rev_h: Vec<u32> = (0..kh).rev().map(|i| i as u32).collect();
    let rev_w: Vec<u32> = (0..kw).rev().map(|i| i as u32).collect();
    let ih = Tensor::from_vec(rev_h, kh, w.device())?;
    let iw = Tensor::from_vec(rev_w, kw, w.device())?;
    Ok(w.index_select(&ih, 2)?
        .index_select(&iw, 3)?
        .permute((1, 0, 2, 3))?
        .contiguous()?)
}

/// 2D transposed convolution, weight `[in_c, out_c, kh, kw]` (torch layout).
/// Output spatial size is `(h - 1) * stride - 2 * pad + k`.
pub fn conv_transpose2d(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (_, _, kh, _) = w.dims4()?;
    let inter = zero_interleave(&zero_interleave(x, 2, stride)?, 3, stride)?;
    let wf = flip_kernel(w)?;
    conv2d(&inter, &wf, b, 1, kh - 1 - pad)
}

/// 2x2 max pooling with stride 2, expressed as reshape + max so the backward
/// pass stays on candle's reduce path.
pub fn max_pool2x2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (ho, wo) = (h / 2, w / 2);
    let y = x
        .narrow(2, 0, ho * 2)?
        .narrow(3, 0, wo * 2)?
        .reshape((b, c, ho, 2, wo, 2))?
        .permute((0, 1, 2, 4, 3, 5))?
        .contiguous()?
        .reshape((b, c, ho, wo, 4))?
        .max(D::Minus1)?;
    Ok(y)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    let scaled = (x * slope)?;
    Ok(x.maximum(&scaled)?)
}

/// log(sum(exp(x), dim=-1)) per row; used by log-softmax checks.
pub fn log_sum_exp_rows(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?;
    let shifted = x.broadcast_sub(&max)?;
    let sum = shifted.exp()?.sum_keepdim(D::Minus1)?;
    Ok(sum.log()?.broadcast_add(&max)?.squeeze(D::Minus1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    fn dev() -> Device {
        Device::Cpu
    }

    /// Central finite-difference check of d(sum of squares)/dvar against the
    /// autodiff gradient through `f`.
    fn grad_check<F>(var: &Var, f: F, h: f64, tol: f64)
    where
        F: Fn() -> Tensor,
    {
        let loss = || -> f64 {
            f().sqr().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
        };
        let y = f();
        let obj = y.sqr().unwrap().sum_all().unwrap();
        let grads = obj.backward().unwrap();
        let g = grads.get(var).expect("missing grad").flatten_all().unwrap();
        let g: Vec<f64> = g.to_vec1().unwrap();

        let flat = var.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let dims = var.dims().to_vec();
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += h;
            var.set(&Tensor::from_vec(plus, dims.as_slice(), &dev()).unwrap()).unwrap();
            let lp = loss();
            let mut minus = flat.clone();
            minus[i] -= h;
            var.set(&Tensor::from_vec(minus, dims.as_slice(), &dev()).unwrap()).unwrap();
            let lm = loss();
            var.set(&Tensor::from_vec(flat.clone(), dims.as_slice(), &dev()).unwrap()).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(g[i].abs()).max(1e-8);
            assert!(
                (fd - g[i]).abs() / denom < tol,
                "grad mismatch at {i}: fd={fd} ad={}",
                g[i]
            );
        }
    }

    #[test]
    fn conv2d_matches_reference() {
        // 1x1x4x4 input, 1x1x3x3 kernel, valid conv computed by hand.
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let x = Tensor::from_vec(x, (1, 1, 4, 4), &dev()).unwrap();
        let w = Tensor::ones((1, 1, 3, 3), DType::F64, &dev()).unwrap();
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        let y: Vec<f64> = y.flatten_all().unwrap().to_vec1().unwrap();
        // sliding 3x3 sums of the 4x4 ramp
        assert_eq!(y, vec![45.0, 54.0, 81.0, 90.0]);
    }

    #[test]
    fn conv2d_stride_and_pad() {
        let x = Tensor::from_vec(
            (0..36).map(|v| v as f64).collect::<Vec<_>>(),
            (1, 1, 6, 6),
            &dev(),
        )
        .unwrap();
        let w = Tensor::ones((1, 1, 4, 4), DType::F64, &dev()).unwrap();
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.dims(), &[1, 1, 3, 3]);
        // top-left window covers padded rows/cols: sum of x[0..3,0..3]
        let vals: Vec<f64> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(vals[0], (0. + 1. + 2.) + (6. + 7. + 8.) + (12. + 13. + 14.));
    }

    #[test]
    fn conv_transpose_shape_and_adjointness() {
        // convT with weight w is the adjoint of conv with the same w:
        // <conv(x), y> == <x, convT(y)> for all x, y.
        let mut rng = crate::nn::TensorRng::new(7);
        let x = rng.randn(&[2, 3, 8, 8], &dev(), DType::F64).unwrap();
        let w = rng.randn(&[4, 3, 4, 4], &dev(), DType::F64).unwrap(); // conv: 3 -> 4 channels
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.dims(), &[2, 4, 4, 4]);
        let g = rng.randn(&[2, 4, 4, 4], &dev(), DType::F64).unwrap();
        // convT wants [in_c, out_c, kh, kw] = w as [4 -> 3] mapping
        let back = conv_transpose2d(&g, &w, None, 2, 1).unwrap();
        assert_eq!(back.dims(), &[2, 3, 8, 8]);
        let lhs = (y * &g).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
        let rhs = (x * &back).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
        assert!((lhs - rhs).abs() < 1e-9, "adjoint identity failed: {lhs} vs {rhs}");
    }

    #[test]
    fn conv_transpose_doubles_resolution() {
        let mut rng = crate::nn::TensorRng::new(3);
        let x = rng.randn(&[1, 8, 7, 7], &dev(), DType::F32).unwrap();
        let w = rng.randn(&[8, 4, 4, 4], &dev(), DType::F32).unwrap();
        let y = conv_transpose2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.dims(), &[1, 4, 14, 14]);
    }

    #[test]
    fn max_pool_values() {
        let x = Tensor::from_vec(
            vec![1.0f64, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0, 9.0, 1.0, 2.0, 3.0, 1.0, 1.0, 1.0, 4.0],
            (1, 1, 4, 4),
            &dev(),
        )
        .unwrap();
        let y = max_pool2x2(&x).unwrap();
        let vals: Vec<f64> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(vals, vec![4.0, 8.0, 9.0, 4.0]);
    }

    #[test]
    fn conv2d_weight_gradient_matches_finite_differences() {
        let mut rng = crate::nn::TensorRng::new(11);
        let x = rng.randn(&[2, 2, 5, 5], &dev(), DType::F64).unwrap();
        let w = Var::from_tensor(&rng.randn(&[3, 2, 3, 3], &dev(), DType::F64).unwrap()).unwrap();
        grad_check(&w, || conv2d(&x, &w, None, 1, 0).unwrap(), 1e-5, 1e-6);
    }

    #[test]
    fn strided_conv_gradient_matches_finite_differences() {
        let mut rng = crate::nn::TensorRng::new(13);
        let x = rng.randn(&[2, 1, 6, 6], &dev(), DType::F64).unwrap();
        let w = Var::from_tensor(&rng.randn(&[2, 1, 4, 4], &dev(), DType::F64).unwrap()).unwrap();
        grad_check(&w, || conv2d(&x, &w, None, 2, 1).unwrap(), 1e-5, 1e-6);
    }

    #[test]
    fn conv_transpose_gradient_matches_finite_differences() {
        let mut rng = crate::nn::TensorRng::new(17);
        let x = rng.randn(&[1, 3, 4, 4], &dev(), DType::F64).unwrap();
        let w = Var::from_tensor(&rng.randn(&[3, 2, 4, 4], &dev(), DType::F64).unwrap()).unwrap();
        grad_check(&w, || conv_transpose2d(&x, &w, None, 2, 1).unwrap(), 1e-5, 1e-6);
    }

    #[test]
    fn max_pool_gradient_matches_finite_differences() {
        let mut rng = crate::nn::TensorRng::new(19);
        let x = Var::from_tensor(&rng.randn(&[1, 2, 4, 4], &dev(), DType::F64).unwrap()).unwrap();
        grad_check(&x, || max_pool2x2(&x).unwrap(), 1e-5, 1e-6);
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let x = Tensor::from_vec(vec![-2.0f64, 3.0], (2,), &dev()).unwrap();
        let y = leaky_relu(&x, 0.2).unwrap();
        let vals: Vec<f64> = y.to_vec1().unwrap();
        assert_eq!(vals, vec![-0.4, 3.0]);
    }
}
