//! Per-parameter importance memory for the regularization strategies:
//! EWC's cumulative Fisher diagonal, SI's path integral, and IMM's per-task
//! moments with mean/mode merging.

use candle_core::{DType, Device, Tensor, Var};

use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::models::batch::samples_to_tensor;
use crate::models::classifier::Classifier;
use crate::models::losses;
use crate::models::GeneratorModel;
use crate::nn::TensorRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportanceKind {
    Ewc,
    Si,
    ImmMean,
    ImmMode,
}

/// Memory carried between tasks by a regularization strategy. All tensor
/// lists are aligned with the model's parameter-store ordering.
pub struct ImportanceState {
    pub kind: ImportanceKind,
    /// Anchor parameter vectors, one per consolidated task. For SI the list
    /// is seeded with the pre-stream initialization so task 0 has a
    /// predecessor for its delta.
    pub anchors: Vec<Vec<Tensor>>,
    /// Cumulative importance: Fisher sum (EWC) or M (SI).
    pub weights: Vec<Tensor>,
    /// IMM-mode per-task variances (Fisher diagonals).
    pub per_task_sigma: Vec<Vec<Tensor>>,
    /// IMM mixture weights; kept uniform.
    pub alphas: Vec<f64>,
    /// SI damping.
    pub xi: f64,
    /// SI running path integral for the current task.
    pub path_acc: Vec<Tensor>,
}

impl ImportanceState {
    pub fn new(kind: ImportanceKind, xi: f64) -> Self {
        Self {
            kind,
            anchors: Vec::new(),
            weights: Vec::new(),
            per_task_sigma: Vec::new(),
            alphas: Vec::new(),
            xi,
            path_acc: Vec::new(),
        }
    }

    pub fn has_memory(&self) -> bool {
        !self.anchors.is_empty() && !self.weights.is_empty()
    }

    fn ensure_zeros_like(slot: &mut Vec<Tensor>, like: &[Var]) -> Result<()> {
        if slot.is_empty() {
            *slot = like
                .iter()
                .map(|v| Tensor::zeros(v.dims(), v.dtype(), v.device()).map_err(Into::into))
                .collect::<Result<_>>()?;
        }
        Ok(())
    }

    /// EWC end-of-task update: records the new anchor and adds the task's
    /// Fisher diagonal onto the cumulative one.
    pub fn ewc_consolidate(&mut self, anchor: Vec<Tensor>, fisher: Vec<Tensor>) -> Result<()> {
        if self.kind != ImportanceKind::Ewc {
            return Err(Error::InvalidParameter("ewc_consolidate on a non-EWC state".into()));
        }
        if self.weights.is_empty() {
            self.weights = fisher;
        } else {
            if self.weights.len() != fisher.len() {
                return Err(Error::InvalidParameter("fisher shape mismatch".into()));
            }
            for (w, f) in self.weights.iter_mut().zip(fisher) {
                *w = (&*w + f)?;
            }
        }
        self.anchors.push(anchor);
        Ok(())
    }

    /// Quadratic penalty around the latest anchor:
    /// EWC `lambda/2 * sum F (theta* - theta)^2`,
    /// SI `lambda * sum M (theta* - theta)^2`.
    /// Returns a scalar tensor attached to the live parameters.
    pub fn penalty(&self, live: &[Var], lambda: f64) -> Result<Tensor> {
        let dev = live
            .first()
            .map(|v| v.device().clone())
            .unwrap_or(Device::Cpu);
        let dtype = live.first().map(|v| v.dtype()).unwrap_or(DType::F32);
        let zero = Tensor::zeros((), dtype, &dev)?;
        if !self.has_memory() || lambda == 0.0 {
            return Ok(zero);
        }
        let anchor = self.anchors.last().unwrap();
        if anchor.len() != live.len() || self.weights.len() != live.len() {
            return Err(Error::InvalidParameter("anchor/parameter shape mismatch".into()));
        }
        let mut acc = zero;
        for ((var, theta_star), w) in live.iter().zip(anchor).zip(&self.weights) {
            let diff = (theta_star - var.as_tensor())?;
            acc = (acc + (diff.sqr()? * w)?.sum_all()?)?;
        }
        let coeff = match self.kind {
            ImportanceKind::Ewc => lambda / 2.0,
            ImportanceKind::Si => lambda,
            _ => 0.0,
        };
        Ok(acc.affine(coeff, 0.0)?)
    }

    /// SI per-step accumulation: `m += (-grad) * delta`.
    pub fn si_accumulate(&mut self, steps: &[(Tensor, Tensor)], live: &[Var]) -> Result<()> {
        if self.kind != ImportanceKind::Si {
            return Ok(());
        }
        Self::ensure_zeros_like(&mut self.path_acc, live)?;
        for (slot, (grad, delta)) in self.path_acc.iter_mut().zip(steps) {
            *slot = (&*slot + (grad.neg()? * delta)?)?;
        }
        Ok(())
    }

    /// SI end-of-task update: `M += m / (delta^2 + xi)` with
    /// `delta = theta*_t - theta*_{t-1}`; the path accumulator resets.
    pub fn si_consolidate(&mut self, new_anchor: Vec<Tensor>) -> Result<()> {
        if self.kind != ImportanceKind::Si {
            return Err(Error::InvalidParameter("si_consolidate on a non-SI state".into()));
        }
        if self.xi <= 0.0 {
            return Err(Error::InvalidParameter(format!("xi must be > 0, got {}", self.xi)));
        }
        let prev = self
            .anchors
            .last()
            .ok_or_else(|| Error::InvalidParameter("SI needs the pre-task anchor seeded".into()))?;
        if self.path_acc.is_empty() {
            // no steps taken: m = 0, M unchanged
            self.anchors.push(new_anchor);
            return Ok(());
        }
        let mut update = Vec::with_capacity(new_anchor.len());
        for ((m, new), old) in self.path_acc.iter().zip(&new_anchor).zip(prev) {
            let delta = (new - old)?;
            update.push((m / (delta.sqr()? + self.xi)?)?);
        }
        if self.weights.is_empty() {
            self.weights = update;
        } else {
            for (w, u) in self.weights.iter_mut().zip(update) {
                *w = (&*w + u)?;
            }
        }
        self.anchors.push(new_anchor);
        self.path_acc.clear();
        Ok(())
    }

    /// IMM end-of-task bookkeeping: anchor plus (for mode-IMM) the task's
    /// Fisher diagonal as the posterior variance proxy.
    pub fn imm_record(&mut self, anchor: Vec<Tensor>, sigma: Option<Vec<Tensor>>) -> Result<()> {
        match self.kind {
            ImportanceKind::ImmMean => {}
            ImportanceKind::ImmMode => {
                let sigma = sigma.ok_or_else(|| {
                    Error::InvalidParameter("mode-IMM needs per-task variances".into())
                })?;
                self.per_task_sigma.push(sigma);
            }
            _ => return Err(Error::InvalidParameter("imm_record on a non-IMM state".into())),
        }
        self.anchors.push(anchor);
        let n = self.anchors.len();
        self.alphas = vec![1.0 / n as f64; n];
        Ok(())
    }

    /// Merged parameter vector over all recorded anchors.
    pub fn imm_merge(&self) -> Result<Vec<Tensor>> {
        if self.anchors.len() < 2 {
            return Err(Error::InvalidParameter("IMM merge needs at least 2 anchors".into()));
        }
        let alpha_sum: f64 = self.alphas.iter().sum();
        if (alpha_sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("alphas sum to {alpha_sum}")));
        }
        let n_params = self.anchors[0].len();
        match self.kind {
            ImportanceKind::ImmMean => {
                let mut merged = Vec::with_capacity(n_params);
                for p in 0..n_params {
                    let mut acc = self.anchors[0][p].affine(self.alphas[0], 0.0)?;
                    for (t, anchor) in self.anchors.iter().enumerate().skip(1) {
                        acc = (acc + anchor[p].affine(self.alphas[t], 0.0)?)?;
                    }
                    merged.push(acc);
                }
                Ok(merged)
            }
            ImportanceKind::ImmMode => {
                if self.per_task_sigma.len() != self.anchors.len() {
                    return Err(Error::InvalidParameter("missing per-task variances".into()));
                }
                // sigma_{0:t} = (sum alpha_i / sigma_i)^{-1};
                // theta = sigma_{0:t} * sum alpha_i theta*_i / sigma_i
                let mut merged = Vec::with_capacity(n_params);
                for p in 0..n_params {
                    for sig in &self.per_task_sigma {
                        let min = sig[p]
                            .flatten_all()?
                            .min(candle_core::D::Minus1)?
                            .to_dtype(DType::F64)?
                            .to_scalar::<f64>()?;
                        if min <= 0.0 {
                            return Err(Error::SingularMoment(format!(
                                "zero variance in mode-IMM at parameter block {p}"
                            )));
                        }
                    }
                    let mut inv_sum = self.per_task_sigma[0][p].recip()?.affine(self.alphas[0], 0.0)?;
                    let mut weighted = (&self.anchors[0][p] * &self.per_task_sigma[0][p].recip()?)?
                        .affine(self.alphas[0], 0.0)?;
                    for t in 1..self.anchors.len() {
                        inv_sum = (inv_sum + self.per_task_sigma[t][p].recip()?.affine(self.alphas[t], 0.0)?)?;
                        weighted = (weighted
                            + (&self.anchors[t][p] * &self.per_task_sigma[t][p].recip()?)?
                                .affine(self.alphas[t], 0.0)?)?;
                    }
                    merged.push((weighted / inv_sum)?);
                }
                Ok(merged)
            }
            _ => Err(Error::InvalidParameter("imm_merge on a non-IMM state".into())),
        }
    }
}

/// Diagonal Fisher estimate for a classifier:
/// `F = E_x[(d log p(y_hat) / d theta)^2]` with `y_hat` drawn from the
/// model's own predictive distribution, one draw per datum.
pub fn fisher_diag_classifier(
    clf: &mut Classifier,
    data: &SampleSet,
    max_samples: Option<usize>,
    seed: u64,
    dev: &Device,
) -> Result<Vec<Tensor>> {
    if data.is_empty() {
        return Err(Error::InvalidData("fisher estimation over an empty task".into()));
    }
    let n = max_samples.map_or(data.len(), |m| m.min(data.len()));
    let vars = clf.store().vars();
    let mut acc: Vec<Tensor> = vars
        .iter()
        .map(|v| Tensor::zeros(v.dims(), v.dtype(), v.device()).map_err(Into::into))
        .collect::<Result<_>>()?;
    let mut rng = TensorRng::new(seed ^ 0xF15E);
    // subsample deterministically when capped
    let stride = (data.len() / n).max(1);
    let mut used = 0usize;
    let mut i = 0usize;
    while used < n && i < data.len() {
        let x = samples_to_tensor(data, &[i], crate::data::Normalization::UnitInterval, dev)?;
        let lp = clf.forward(&x, false, &mut rng)?;
        let probs: Vec<f32> = lp.exp()?.flatten_all()?.to_vec1()?;
        let y_hat = rng.categorical(&probs) as u16;
        let loss = losses::nll_loss(&lp, &[y_hat])?;
        let grads = loss.backward()?;
        for (slot, var) in acc.iter_mut().zip(&vars) {
            if let Some(g) = grads.get(var) {
                *slot = (&*slot + g.sqr()?)?;
            }
        }
        used += 1;
        i += stride;
    }
    for slot in acc.iter_mut() {
        *slot = slot.affine(1.0 / used as f64, 0.0)?;
    }
    Ok(acc)
}

/// Diagonal Fisher proxy for generators, over the penalized parameters.
/// GAN family: squared gradients of `log D(G(z))` per latent draw.
/// VAE family: squared gradients of the per-sample ELBO loss.
pub fn fisher_diag_generator(
    gen: &GeneratorModel,
    data: &SampleSet,
    n_samples: usize,
    seed: u64,
    dev: &Device,
) -> Result<Vec<Tensor>> {
    let vars = gen.penalized_vars();
    let mut acc: Vec<Tensor> = vars
        .iter()
        .map(|v| Tensor::zeros(v.dims(), v.dtype(), v.device()).map_err(Into::into))
        .collect::<Result<_>>()?;
    let mut rng = TensorRng::new(seed ^ 0xF15E_6E4);
    let adversarial = gen.family().is_adversarial();
    let n = if adversarial { n_samples.max(1) } else { n_samples.max(1).min(data.len().max(1)) };
    let n_cond = gen.arch.n_cond;
    let mut used = 0usize;
    for i in 0..n {
        let loss = if adversarial {
            let z = rng.randn(&[1, gen.arch.latent_dim], dev, gen.dtype())?;
            let labels: Option<Vec<u16>> = if gen.family().is_conditional() {
                Some(vec![rng.gen_range_usize(0, n_cond.max(1)) as u16])
            } else {
                None
            };
            let fake = gen.generate(&z, labels.as_deref())?;
            let d = gen.discriminate(&fake, labels.as_deref())?;
            match gen.family() {
                crate::models::GenFamily::Gan | crate::models::GenFamily::Cgan => {
                    d.log()?.mean_all()?.neg()?
                }
                _ => d.mean_all()?.neg()?,
            }
        } else {
            if data.is_empty() {
                return Err(Error::InvalidData("VAE fisher needs task data".into()));
            }
            let idx = i % data.len();
            let x = samples_to_tensor(data, &[idx], gen.family().normalization(), dev)?;
            let labels: Option<Vec<u16>> = if gen.family().is_conditional() {
                Some(vec![data.labels[idx]])
            } else {
                None
            };
            let (x_hat, mu, sigma) = gen.vae_forward(&x, labels.as_deref(), &mut rng)?;
            losses::vae_loss(&x, &x_hat, &mu, &sigma)?
        };
        let grads = loss.backward()?;
        for (slot, var) in acc.iter_mut().zip(&vars) {
            if let Some(g) = grads.get(var) {
                *slot = (&*slot + g.sqr()?)?;
            }
        }
        used += 1;
    }
    for slot in acc.iter_mut() {
        *slot = slot.affine(1.0 / used.max(1) as f64, 0.0)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::classifier::ClassifierArch;

    fn dev() -> Device {
        Device::Cpu
    }

    fn tiny_data(n: usize) -> SampleSet {
        let mut s = SampleSet::default();
        let mut rng = TensorRng::new(9);
        for i in 0..n {
            let img: Vec<u8> = (0..784).map(|_| (rng.gen_f64() * 255.0) as u8).collect();
            s.push(&img, (i % 3) as u16);
        }
        s
    }

    #[test]
    fn fisher_is_nonnegative_and_singleton_matches_definition() {
        let mut rng = TensorRng::new(1);
        let mut clf = Classifier::new(ClassifierArch::Mlp, 3, &mut rng, &dev()).unwrap();
        let data = tiny_data(1);
        let f = fisher_diag_classifier(&mut clf, &data, None, 7, &dev()).unwrap();
        for t in &f {
            let v: Vec<f32> = t.flatten_all().unwrap().to_vec1().unwrap();
            assert!(v.iter().all(|x| *x >= 0.0));
        }
        // singleton: F equals the squared gradient of that one sample
        let f2 = fisher_diag_classifier(&mut clf, &data, None, 7, &dev()).unwrap();
        for (a, b) in f.iter().zip(&f2) {
            let av: Vec<f32> = a.flatten_all().unwrap().to_vec1().unwrap();
            let bv: Vec<f32> = b.flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(av, bv);
        }
    }

    #[test]
    fn ewc_fisher_accumulates() {
        let mut rng = TensorRng::new(2);
        let mut clf = Classifier::new(ClassifierArch::Mlp, 3, &mut rng, &dev()).unwrap();
        let data = tiny_data(4);
        let f1 = fisher_diag_classifier(&mut clf, &data, None, 1, &dev()).unwrap();
        let f2 = fisher_diag_classifier(&mut clf, &data, None, 2, &dev()).unwrap();
        let mut state = ImportanceState::new(ImportanceKind::Ewc, 0.1);
        let anchor = clf.store().snapshot().unwrap();
        state.ewc_consolidate(anchor.clone(), f1.clone()).unwrap();
        state.ewc_consolidate(anchor, f2.clone()).unwrap();
        for ((w, a), b) in state.weights.iter().zip(&f1).zip(&f2) {
            let wv: Vec<f32> = w.flatten_all().unwrap().to_vec1().unwrap();
            let av: Vec<f32> = a.flatten_all().unwrap().to_vec1().unwrap();
            let bv: Vec<f32> = b.flatten_all().unwrap().to_vec1().unwrap();
            for i in 0..wv.len() {
                assert!((wv[i] - (av[i] + bv[i])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn penalty_is_zero_at_anchor_and_matches_hand_value() {
        let dev = dev();
        let v = Var::from_tensor(&Tensor::from_vec(vec![1.0f32, 2.0], (2,), &dev).unwrap()).unwrap();
        let mut state = ImportanceState::new(ImportanceKind::Ewc, 0.1);
        state
            .ewc_consolidate(
                vec![v.as_tensor().copy().unwrap()],
                vec![Tensor::ones((2,), DType::F32, &dev).unwrap()],
            )
            .unwrap();
        let p0 = state.penalty(&[v.clone()], 1.0).unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(p0, 0.0);
        // offset both params by 0.1 with F = 1, lambda = 1 -> 0.5 * 2 * 0.01 = 0.01
        v.set(&Tensor::from_vec(vec![1.1f32, 2.1], (2,), &dev).unwrap()).unwrap();
        let p = state.penalty(&[v.clone()], 1.0).unwrap().to_scalar::<f32>().unwrap();
        assert!((p - 0.01).abs() < 1e-6);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let dev = dev();
        let v = Var::from_tensor(&Tensor::from_vec(vec![0.5f64, -0.25, 1.5], (3,), &dev).unwrap()).unwrap();
        let mut state = ImportanceState::new(ImportanceKind::Ewc, 0.1);
        state
            .ewc_consolidate(
                vec![Tensor::from_vec(vec![0.0f64, 0.0, 1.0], (3,), &dev).unwrap()],
                vec![Tensor::from_vec(vec![2.0f64, 0.5, 1.0], (3,), &dev).unwrap()],
            )
            .unwrap();
        let lambda = 3.0;
        let grads = state.penalty(&[v.clone()], lambda).unwrap().backward().unwrap();
        let g: Vec<f64> = grads.get(&v).unwrap().to_vec1().unwrap();
        let base: Vec<f64> = v.to_vec1().unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut p = base.clone();
            p[i] += h;
            v.set(&Tensor::from_vec(p, (3,), &dev).unwrap()).unwrap();
            let lp = state.penalty(&[v.clone()], lambda).unwrap().to_scalar::<f64>().unwrap();
            let mut m = base.clone();
            m[i] -= h;
            v.set(&Tensor::from_vec(m, (3,), &dev).unwrap()).unwrap();
            let lm = state.penalty(&[v.clone()], lambda).unwrap().to_scalar::<f64>().unwrap();
            v.set(&Tensor::from_vec(base.clone(), (3,), &dev).unwrap()).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(g[i].abs()).max(1e-8);
            assert!((fd - g[i]).abs() / denom <= 1e-4);
        }
    }

    #[test]
    fn si_path_integral_and_consolidation() {
        let dev = dev();
        let v = Var::from_tensor(&Tensor::from_vec(vec![1.0f32, 1.0], (2,), &dev).unwrap()).unwrap();
        let mut state = ImportanceState::new(ImportanceKind::Si, 0.1);
        state.anchors.push(vec![v.as_tensor().copy().unwrap()]);
        // no steps -> m stays empty, M unchanged
        state.si_consolidate(vec![v.as_tensor().copy().unwrap()]).unwrap();
        assert!(state.weights.is_empty());

        // single SGD-like step: delta = -eta * grad -> m = eta * grad^2 >= 0
        let grad = Tensor::from_vec(vec![2.0f32, -1.0], (2,), &dev).unwrap();
        let delta = grad.affine(-0.1, 0.0).unwrap();
        state.si_accumulate(&[(grad.clone(), delta.clone())], &[v.clone()]).unwrap();
        let m: Vec<f32> = state.path_acc[0].to_vec1().unwrap();
        assert!((m[0] - 0.4).abs() < 1e-6 && (m[1] - 0.1).abs() < 1e-6);

        // additivity: two half-steps equal one combined accumulation
        let mut other = ImportanceState::new(ImportanceKind::Si, 0.1);
        other.anchors.push(vec![v.as_tensor().copy().unwrap()]);
        let half = delta.affine(0.5, 0.0).unwrap();
        other.si_accumulate(&[(grad.clone(), half.clone())], &[v.clone()]).unwrap();
        other.si_accumulate(&[(grad.clone(), half)], &[v.clone()]).unwrap();
        let m2: Vec<f32> = other.path_acc[0].to_vec1().unwrap();
        assert!((m2[0] - m[0]).abs() < 1e-6);

        // delta = 0 with xi > 0 -> finite M = m / xi
        let new_anchor = vec![v.as_tensor().copy().unwrap()];
        state.si_consolidate(new_anchor).unwrap();
        let w: Vec<f32> = state.weights[0].to_vec1().unwrap();
        assert!((w[0] - 4.0).abs() < 1e-4, "m/xi = 0.4/0.1, got {}", w[0]);
        assert!(state.path_acc.is_empty());

        let mut bad = ImportanceState::new(ImportanceKind::Si, 0.0);
        bad.anchors.push(vec![v.as_tensor().copy().unwrap()]);
        assert!(bad.si_consolidate(vec![v.as_tensor().copy().unwrap()]).is_err());
    }

    #[test]
    fn imm_mean_merges_weighted_average() {
        let dev = dev();
        let mut state = ImportanceState::new(ImportanceKind::ImmMean, 0.1);
        state.imm_record(vec![Tensor::from_vec(vec![0.0f32], (1,), &dev).unwrap()], None).unwrap();
        state.imm_record(vec![Tensor::from_vec(vec![2.0f32], (1,), &dev).unwrap()], None).unwrap();
        let merged = state.imm_merge().unwrap();
        let v: Vec<f32> = merged[0].to_vec1().unwrap();
        assert_eq!(v, vec![1.0]);
    }

    #[test]
    fn imm_identical_anchors_are_fixed_points() {
        let dev = dev();
        let anchor = Tensor::from_vec(vec![0.7f32, -0.3], (2,), &dev).unwrap();
        for kind in [ImportanceKind::ImmMean, ImportanceKind::ImmMode] {
            let mut state = ImportanceState::new(kind, 0.1);
            let sigma = || {
                if kind == ImportanceKind::ImmMode {
                    Some(vec![Tensor::from_vec(vec![0.5f32, 2.0], (2,), &dev).unwrap()])
                } else {
                    None
                }
            };
            state.imm_record(vec![anchor.copy().unwrap()], sigma()).unwrap();
            state.imm_record(vec![anchor.copy().unwrap()], sigma()).unwrap();
            let merged = state.imm_merge().unwrap();
            let v: Vec<f32> = merged[0].to_vec1().unwrap();
            assert!((v[0] - 0.7).abs() < 1e-6 && (v[1] + 0.3).abs() < 1e-6);
        }
    }

    #[test]
    fn imm_mode_with_equal_sigma_reduces_to_mean() {
        let dev = dev();
        let a1 = Tensor::from_vec(vec![0.0f32, 4.0], (2,), &dev).unwrap();
        let a2 = Tensor::from_vec(vec![2.0f32, 0.0], (2,), &dev).unwrap();
        let sig = Tensor::from_vec(vec![0.3f32, 0.3], (2,), &dev).unwrap();
        let mut mode = ImportanceState::new(ImportanceKind::ImmMode, 0.1);
        mode.imm_record(vec![a1.copy().unwrap()], Some(vec![sig.copy().unwrap()])).unwrap();
        mode.imm_record(vec![a2.copy().unwrap()], Some(vec![sig.copy().unwrap()])).unwrap();
        let merged = mode.imm_merge().unwrap();
        let v: Vec<f32> = merged[0].to_vec1().unwrap();
        assert!((v[0] - 1.0).abs() < 1e-6 && (v[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn imm_mode_rejects_zero_variance() {
        let dev = dev();
        let a = Tensor::from_vec(vec![1.0f32], (1,), &dev).unwrap();
        let mut state = ImportanceState::new(ImportanceKind::ImmMode, 0.1);
        state
            .imm_record(vec![a.copy().unwrap()], Some(vec![Tensor::from_vec(vec![1.0f32], (1,), &dev).unwrap()]))
            .unwrap();
        state
            .imm_record(vec![a.copy().unwrap()], Some(vec![Tensor::from_vec(vec![0.0f32], (1,), &dev).unwrap()]))
            .unwrap();
        assert!(matches!(state.imm_merge(), Err(Error::SingularMoment(_))));
    }
}
