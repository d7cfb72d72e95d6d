//! Loss functions for the model zoo. All of them return scalar tensors that
//! stay attached to the autodiff graph.

use candle_core::{DType, Tensor, D};

use crate::error::{Error, Result};

/// Mean over the batch of `-log_probs[b, targets[b]]`.
///
/// `log_probs` rows must already be log-distributions (log-softmax output).
pub fn nll_loss(log_probs: &Tensor, targets: &[u16]) -> Result<Tensor> {
    let (b, k) = log_probs.dims2()?;
    if targets.len() != b {
        return Err(Error::InvalidParameter(format!(
            "{} targets for a batch of {b}",
            targets.len()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t as usize >= k) {
        return Err(Error::InvalidTarget(bad as usize, k));
    }
    let idx = Tensor::from_vec(
        targets.iter().map(|&t| t as u32).collect::<Vec<_>>(),
        (b, 1),
        log_probs.device(),
    )?;
    let picked = log_probs.gather(&idx, 1)?;
    Ok(picked.mean_all()?.neg()?)
}

/// Gaussian KL divergence KL(N(mu, sigma) || N(0, 1)) per dimension:
/// `-ln(sigma) + (sigma^2 + mu^2 - 1) / 2`.
pub fn gaussian_kl(mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    let var = sigma.sqr()?;
    Ok(((var + mu.sqr()?)? - 1.0)?
        .affine(0.5, 0.0)?
        .sub(&sigma.log()?)?)
}

/// VAE objective: squared reconstruction error (summed over pixels) plus the
/// closed-form Gaussian KL (summed over latent dims), both averaged over the
/// batch. `sigma` must be positive elementwise.
pub fn vae_loss(x: &Tensor, x_hat: &Tensor, mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    let min_sigma = sigma
        .flatten_all()?
        .min(D::Minus1)?
        .to_dtype(DType::F64)?
        .to_scalar::<f64>()?;
    if min_sigma <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "vae_loss needs sigma > 0, found {min_sigma}"
        )));
    }
    let b = x.dims()[0];
    let recon = x
        .reshape((b, ()))?
        .sub(&x_hat.reshape((b, ()))?)?
        .sqr()?
        .sum(D::Minus1)?;
    let kl = gaussian_kl(mu, sigma)?.sum(D::Minus1)?;
    Ok((recon + kl)?.mean_all()?)
}

fn check_unit_interval(t: &Tensor, what: &str) -> Result<()> {
    let flat = t.flatten_all()?.to_dtype(DType::F64)?;
    let min = flat.min(D::Minus1)?.to_scalar::<f64>()?;
    let max = flat.max(D::Minus1)?.to_scalar::<f64>()?;
    if min <= 0.0 || max >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "{what} must lie in (0, 1), found [{min}, {max}]"
        )));
    }
    Ok(())
}

/// Standard GAN losses from discriminator outputs on real and fake batches.
/// Returns `(loss_d, loss_g)` with the non-saturating generator form:
/// `loss_d = -(E[log d_real] + E[log(1 - d_fake)])`, `loss_g = -E[log d_fake]`.
pub fn gan_losses(d_real: &Tensor, d_fake: &Tensor) -> Result<(Tensor, Tensor)> {
    check_unit_interval(d_real, "d_real")?;
    check_unit_interval(d_fake, "d_fake")?;
    let loss_d = d_real
        .log()?
        .mean_all()?
        .add(&(d_fake.neg()? + 1.0)?.log()?.mean_all()?)?
        .neg()?;
    let loss_g = d_fake.log()?.mean_all()?.neg()?;
    Ok((loss_d, loss_g))
}

/// Wasserstein critic/generator losses from raw critic scores.
pub fn wgan_losses(c_real: &Tensor, c_fake: &Tensor) -> Result<(Tensor, Tensor)> {
    let loss_d = c_fake.mean_all()?.sub(&c_real.mean_all()?)?;
    let loss_g = c_fake.mean_all()?.neg()?;
    Ok((loss_d, loss_g))
}

/// Clamps every critic parameter into [-c, c] (WGAN Lipschitz constraint).
pub fn wgan_weight_clip(vars: &[candle_core::Var], c: f64) -> Result<()> {
    if c <= 0.0 {
        return Err(Error::InvalidParameter(format!("clip bound must be > 0, got {c}")));
    }
    for v in vars {
        v.set(&v.as_tensor().clamp(-c, c)?)?;
    }
    Ok(())
}

/// Gradient penalty `lambda * E[(||grad||_2 - 1)^2]` given per-sample input
/// gradients of the critic at interpolated points, shape `[B, ...]`.
pub fn gradient_penalty_from_grads(grads: &Tensor, lambda: f64) -> Result<Tensor> {
    let b = grads.dims()[0];
    let norm = grads
        .reshape((b, ()))?
        .sqr()?
        .sum(D::Minus1)?
        .add(&Tensor::full(1e-12, b, grads.device())?.to_dtype(grads.dtype())?)?
        .sqrt()?;
    Ok((norm - 1.0)?.sqr()?.mean_all()?.affine(lambda, 0.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn dev() -> Device {
        Device::Cpu
    }

    fn t(v: Vec<f64>, shape: &[usize]) -> Tensor {
        Tensor::from_vec(v, shape, &dev()).unwrap()
    }

    #[test]
    fn nll_perfect_prediction_is_zero() {
        // log-prob 0 at the target, -inf elsewhere is not representable;
        // use a one-hot-ish row with log-prob 0 at target
        let lp = t(vec![0.0, -1e9, -1e9], &[1, 3]);
        let loss = nll_loss(&lp, &[0]).unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn nll_uniform_is_log_k() {
        let k = 10;
        let lp = t(vec![(1.0f64 / k as f64).ln(); k], &[1, k]);
        let loss = nll_loss(&lp, &[3]).unwrap().to_scalar::<f64>().unwrap();
        assert!((loss - (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_rejects_out_of_range_target() {
        let lp = t(vec![0.0, 0.0], &[1, 2]);
        assert!(matches!(nll_loss(&lp, &[2]), Err(Error::InvalidTarget(2, 2))));
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut rng = crate::nn::TensorRng::new(5);
        let raw = Var::from_tensor(&rng.randn(&[4, 6], &dev(), DType::F64).unwrap()).unwrap();
        let targets = [1u16, 0, 5, 2];
        let loss_fn = || {
            let lp = candle_nn::ops::log_softmax(raw.as_tensor(), 1).unwrap();
            nll_loss(&lp, &targets).unwrap()
        };
        let grads = loss_fn().backward().unwrap();
        let g: Vec<f64> = grads.get(&raw).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let base: Vec<f64> = raw.flatten_all().unwrap().to_vec1().unwrap();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            raw.set(&t(p, &[4, 6])).unwrap();
            let lp = loss_fn().to_scalar::<f64>().unwrap();
            let mut m = base.clone();
            m[i] -= h;
            raw.set(&t(m, &[4, 6])).unwrap();
            let lm = loss_fn().to_scalar::<f64>().unwrap();
            raw.set(&t(base.clone(), &[4, 6])).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(g[i].abs()).max(1e-8);
            assert!((fd - g[i]).abs() / denom <= 1e-4, "i={i} fd={fd} ad={}", g[i]);
        }
    }

    #[test]
    fn vae_loss_identity_case_is_zero() {
        let x = t(vec![0.3, 0.7], &[1, 2]);
        let mu = t(vec![0.0, 0.0], &[1, 2]);
        let sigma = t(vec![1.0, 1.0], &[1, 2]);
        let loss = vae_loss(&x, &x, &mu, &sigma).unwrap().to_scalar::<f64>().unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn vae_kl_half_per_dim_at_unit_mean() {
        let x = t(vec![0.5], &[1, 1]);
        let mu = t(vec![1.0, 1.0, 1.0], &[1, 3]);
        let sigma = t(vec![1.0, 1.0, 1.0], &[1, 3]);
        let loss = vae_loss(&x, &x, &mu, &sigma).unwrap().to_scalar::<f64>().unwrap();
        assert!((loss - 1.5).abs() < 1e-12, "0.5 per latent dim, got {loss}");
    }

    #[test]
    fn vae_loss_rejects_nonpositive_sigma() {
        let x = t(vec![0.5], &[1, 1]);
        let mu = t(vec![0.0], &[1, 1]);
        let sigma = t(vec![0.0], &[1, 1]);
        assert!(matches!(vae_loss(&x, &x, &mu, &sigma), Err(Error::InvalidParameter(_))));
    }

    /// Numerical quadrature of the KL integrand between N(mu, sigma) and N(0,1).
    fn kl_quadrature(mu: f64, sigma: f64) -> f64 {
        // integrate p(x) * ln(p(x)/q(x)) over a wide grid
        let n = 400_000;
        let lo = mu - 12.0 * sigma.max(1.0);
        let hi = mu + 12.0 * sigma.max(1.0);
        let step = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * step;
            let p = (-((x - mu) * (x - mu)) / (2.0 * sigma * sigma)).exp()
                / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            let q = (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
            if p > 0.0 {
                acc += p * (p / q).ln() * step;
            }
        }
        acc
    }

    #[test]
    fn vae_kl_matches_quadrature() {
        for (mu, sigma) in [(0.0, 1.0), (1.0, 2.0), (-0.5, 0.3)] {
            let m = t(vec![mu], &[1, 1]);
            let s = t(vec![sigma], &[1, 1]);
            let closed = gaussian_kl(&m, &s).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
            let quad = kl_quadrature(mu, sigma);
            assert!(
                (closed - quad).abs() <= 1e-6,
                "mu={mu} sigma={sigma}: closed {closed} vs quadrature {quad}"
            );
        }
    }

    #[test]
    fn vae_gradient_matches_finite_differences() {
        let mut rng = crate::nn::TensorRng::new(6);
        let x = rng.uniform(0.0, 1.0, &[2, 3], &dev(), DType::F64).unwrap();
        let x_hat = Var::from_tensor(&rng.uniform(0.1, 0.9, &[2, 3], &dev(), DType::F64).unwrap()).unwrap();
        let mu = Var::from_tensor(&rng.randn(&[2, 4], &dev(), DType::F64).unwrap()).unwrap();
        let raw_sigma = Var::from_tensor(&rng.uniform(0.2, 1.5, &[2, 4], &dev(), DType::F64).unwrap()).unwrap();
        let loss_fn = || vae_loss(&x, x_hat.as_tensor(), mu.as_tensor(), raw_sigma.as_tensor()).unwrap();
        for var in [&x_hat, &mu, &raw_sigma] {
            let grads = loss_fn().backward().unwrap();
            let g: Vec<f64> = grads.get(var).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            let base: Vec<f64> = var.flatten_all().unwrap().to_vec1().unwrap();
            let dims = var.dims().to_vec();
            let h = 1e-6;
            for i in 0..base.len() {
                let mut p = base.clone();
                p[i] += h;
                var.set(&Tensor::from_vec(p, dims.as_slice(), &dev()).unwrap()).unwrap();
                let lp = loss_fn().to_scalar::<f64>().unwrap();
                let mut m = base.clone();
                m[i] -= h;
                var.set(&Tensor::from_vec(m, dims.as_slice(), &dev()).unwrap()).unwrap();
                let lm = loss_fn().to_scalar::<f64>().unwrap();
                var.set(&Tensor::from_vec(base.clone(), dims.as_slice(), &dev()).unwrap()).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(g[i].abs()).max(1e-6);
                assert!((fd - g[i]).abs() / denom <= 1e-4, "fd={fd} ad={}", g[i]);
            }
        }
    }

    #[test]
    fn gan_losses_at_half_are_two_log_two() {
        let d_real = t(vec![0.5, 0.5], &[2]);
        let d_fake = t(vec![0.5, 0.5], &[2]);
        let (loss_d, _) = gan_losses(&d_real, &d_fake).unwrap();
        let v = loss_d.to_scalar::<f64>().unwrap();
        assert!((v - 2.0 * (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn gan_loss_d_vanishes_for_perfect_discriminator() {
        let d_real = t(vec![1.0 - 1e-9], &[1]);
        let d_fake = t(vec![1e-9], &[1]);
        let (loss_d, _) = gan_losses(&d_real, &d_fake).unwrap();
        assert!(loss_d.to_scalar::<f64>().unwrap() < 1e-6);
    }

    #[test]
    fn gan_loss_g_monotone_in_d_fake() {
        let d_real = t(vec![0.5], &[1]);
        let mut prev = f64::INFINITY;
        for df in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let (_, loss_g) = gan_losses(&d_real, &t(vec![df], &[1])).unwrap();
            let v = loss_g.to_scalar::<f64>().unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn gan_losses_reject_out_of_range() {
        let ok = t(vec![0.5], &[1]);
        let bad = t(vec![1.0], &[1]);
        assert!(matches!(gan_losses(&bad, &ok), Err(Error::InvalidParameter(_))));
        assert!(matches!(gan_losses(&ok, &bad), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn gan_gradient_matches_finite_differences() {
        let mut rng = crate::nn::TensorRng::new(8);
        let d_real = Var::from_tensor(&rng.uniform(0.2, 0.8, &[3], &dev(), DType::F64).unwrap()).unwrap();
        let d_fake = Var::from_tensor(&rng.uniform(0.2, 0.8, &[3], &dev(), DType::F64).unwrap()).unwrap();
        for (which, var) in [(0, &d_real), (1, &d_fake)] {
            let loss_fn = || {
                let (ld, lg) = gan_losses(d_real.as_tensor(), d_fake.as_tensor()).unwrap();
                if which == 0 { ld } else { lg }
            };
            let grads = loss_fn().backward().unwrap();
            let g: Vec<f64> = match grads.get(var) {
                Some(g) => g.flatten_all().unwrap().to_vec1().unwrap(),
                None => vec![0.0; 3],
            };
            let base: Vec<f64> = var.flatten_all().unwrap().to_vec1().unwrap();
            let h = 1e-6;
            for i in 0..3 {
                let mut p = base.clone();
                p[i] += h;
                var.set(&t(p, &[3])).unwrap();
                let lp = loss_fn().to_scalar::<f64>().unwrap();
                let mut m = base.clone();
                m[i] -= h;
                var.set(&t(m, &[3])).unwrap();
                let lm = loss_fn().to_scalar::<f64>().unwrap();
                var.set(&t(base.clone(), &[3])).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(g[i].abs()).max(1e-8);
                assert!((fd - g[i]).abs() / denom <= 1e-4);
            }
        }
    }

    #[test]
    fn weight_clip_is_idempotent_clamp() {
        let v = Var::from_tensor(&t(vec![0.7, -0.5, 0.005], &[3])).unwrap();
        wgan_weight_clip(&[v.clone()], 0.01).unwrap();
        let once: Vec<f64> = v.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(once, vec![0.01, -0.01, 0.005]);
        wgan_weight_clip(&[v.clone()], 0.01).unwrap();
        let twice: Vec<f64> = v.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(once, twice);
        assert!(wgan_weight_clip(&[v], 0.0).is_err());
    }

    #[test]
    fn gradient_penalty_unit_norm_is_zero() {
        // gradient vectors of norm 1 -> penalty 0; norm 2 -> lambda
        let g = t(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let p = gradient_penalty_from_grads(&g, 10.0).unwrap().to_scalar::<f64>().unwrap();
        assert!(p.abs() < 1e-9);
        let g2 = t(vec![2.0, 0.0], &[1, 2]);
        let p2 = gradient_penalty_from_grads(&g2, 10.0).unwrap().to_scalar::<f64>().unwrap();
        assert!((p2 - 10.0).abs() < 1e-9);
    }
}
