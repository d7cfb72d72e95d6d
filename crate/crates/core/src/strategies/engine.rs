//! Per-task training under a continual-learning strategy: assembles the
//! effective dataset (rehearsal mixes, generative replay, accumulated data),
//! runs the family-specific optimization loop with the strategy's effective
//! loss, and performs end-of-task consolidation.

use candle_core::Device;
use serde::{Deserialize, Serialize};

use crate::data::{Normalization, SampleSet};
use crate::error::{Error, Result};
use crate::models::batch::{EpochIter, SynthSet, TrainPool};
use crate::models::classifier::Classifier;
use crate::models::losses;
use crate::models::{GenFamily, GeneratorModel};
use crate::nn::{check_finite, scalar_f64, Adam, Optimizer, Sgd, TensorRng};
use crate::scenarios::Continuum;

use super::importance::{fisher_diag_classifier, fisher_diag_generator, ImportanceKind, ImportanceState};
use super::replay::{clone_classifier, Coreset, ReplaySnapshot};

/// The lambda grid searched by the hyperparameter protocol.
pub const LAMBDA_GRID: [f64; 8] = [0.1, 1.0, 2.0, 5.0, 10.0, 20.0, 100.0, 1000.0];

pub const WGAN_CLIP: f64 = 0.01;
pub const WGAN_GP_LAMBDA: f64 = 10.0;
pub const CRITIC_STEPS_WASSERSTEIN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum StrategyKind {
    FineTune,
    Ewc { lambda: f64 },
    Si { lambda: f64, xi: f64 },
    ImmMean,
    ImmMode,
    Rehearsal { k: usize },
    /// Dual-model self-replay for generative streams (tN balanced budget).
    GenerativeReplay,
    /// Frozen G + frozen C regenerate and label past data; budget factor 1.0
    /// is the balanced tN rule, 0.1 the unbalanced variant.
    MarginalReplay { budget_factor: f64 },
    /// Frozen conditional G regenerates labeled past data.
    ConditionalReplay { budget_factor: f64 },
    UpperboundData,
    UpperboundModel,
}

impl StrategyKind {
    pub fn tag(&self) -> &'static str {
        match self {
            StrategyKind::FineTune => "fine-tune",
            StrategyKind::Ewc { .. } => "ewc",
            StrategyKind::Si { .. } => "si",
            StrategyKind::ImmMean => "imm-mean",
            StrategyKind::ImmMode => "imm-mode",
            StrategyKind::Rehearsal { .. } => "rehearsal",
            StrategyKind::GenerativeReplay => "generative-replay",
            StrategyKind::MarginalReplay { .. } => "marginal-replay",
            StrategyKind::ConditionalReplay { .. } => "conditional-replay",
            StrategyKind::UpperboundData => "upperbound-data",
            StrategyKind::UpperboundModel => "upperbound-model",
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            StrategyKind::Ewc { lambda } | StrategyKind::Si { lambda, .. } => *lambda,
            _ => 0.0,
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> StrategyKind {
        match self {
            StrategyKind::Ewc { .. } => StrategyKind::Ewc { lambda },
            StrategyKind::Si { xi, .. } => StrategyKind::Si { lambda, xi: *xi },
            other => *other,
        }
    }

    pub fn uses_lambda_grid(&self) -> bool {
        matches!(self, StrategyKind::Ewc { .. } | StrategyKind::Si { .. })
    }

    fn importance_kind(&self) -> Option<ImportanceKind> {
        match self {
            StrategyKind::Ewc { .. } => Some(ImportanceKind::Ewc),
            StrategyKind::Si { .. } => Some(ImportanceKind::Si),
            StrategyKind::ImmMean => Some(ImportanceKind::ImmMean),
            StrategyKind::ImmMode => Some(ImportanceKind::ImmMode),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum OptimizerSpec {
    Adam { lr_classifier: f64, lr_generator: f64, beta1: f64, beta2: f64 },
    Sgd { lr: f64, momentum: f64 },
}

impl OptimizerSpec {
    pub fn adam_defaults() -> Self {
        OptimizerSpec::Adam { lr_classifier: 0.01, lr_generator: 2e-4, beta1: 0.5, beta2: 0.999 }
    }

    pub fn sgd_defaults() -> Self {
        OptimizerSpec::Sgd { lr: 0.01, momentum: 0.9 }
    }

    fn classifier_opt(&self) -> Box<dyn Optimizer> {
        match *self {
            OptimizerSpec::Adam { lr_classifier, beta1, beta2, .. } => {
                Box::new(Adam::new(lr_classifier, beta1, beta2))
            }
            OptimizerSpec::Sgd { lr, momentum } => Box::new(Sgd::new(lr, momentum)),
        }
    }

    fn generator_opt(&self) -> Box<dyn Optimizer> {
        match *self {
            OptimizerSpec::Adam { lr_generator, beta1, beta2, .. } => {
                Box::new(Adam::new(lr_generator, beta1, beta2))
            }
            OptimizerSpec::Sgd { lr, momentum } => Box::new(Sgd::new(lr, momentum)),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    /// Per-task replay budget N; task train size when unset.
    pub replay_n: Option<usize>,
    /// Cap on samples used for Fisher estimation; full task data when unset.
    pub fisher_samples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 64,
            optimizer: OptimizerSpec::adam_defaults(),
            replay_n: None,
            fisher_samples: None,
        }
    }
}

/// Mutable strategy memory carried across the whole continuum.
pub struct StrategyState {
    pub kind: StrategyKind,
    pub importance: Option<ImportanceState>,
    pub coreset: Option<Coreset>,
    pub snapshot: Option<ReplaySnapshot>,
    /// upperbound-data: everything seen so far, copied while legal.
    pub accumulated: Option<SampleSet>,
}

impl StrategyState {
    pub fn new(kind: StrategyKind) -> Result<Self> {
        let importance = kind.importance_kind().map(|k| {
            let xi = match kind {
                StrategyKind::Si { xi, .. } => xi,
                _ => 0.1,
            };
            ImportanceState::new(k, xi)
        });
        let coreset = match kind {
            StrategyKind::Rehearsal { k } => Some(Coreset::new(k)?),
            _ => None,
        };
        let accumulated = matches!(kind, StrategyKind::UpperboundData).then(SampleSet::default);
        Ok(Self { kind, importance, coreset, snapshot: None, accumulated })
    }

    /// SI needs the pre-stream parameters as the first anchor.
    pub fn seed_si_anchor(&mut self, params: Vec<candle_core::Tensor>) {
        if let Some(imp) = &mut self.importance {
            if imp.kind == ImportanceKind::Si && imp.anchors.is_empty() {
                imp.anchors.push(params);
            }
        }
    }

    pub fn stored_data_bytes(&self) -> usize {
        let coreset = self.coreset.as_ref().map_or(0, |c| c.stored_bytes());
        let snapshot = self.snapshot.as_ref().map_or(0, |s| s.param_bytes());
        let accumulated = self
            .accumulated
            .as_ref()
            .map_or(0, |a| a.len() * (crate::data::IMAGE_PIXELS + 2));
        coreset + snapshot + accumulated
    }
}

/// What gets trained on a task.
pub enum TaskModels<'a> {
    Classifier(&'a mut Classifier),
    Generator(&'a mut GeneratorModel),
    /// Classification with generative replay: classifier plus the generator
    /// that will regenerate this task later.
    Pair {
        classifier: &'a mut Classifier,
        generator: &'a mut GeneratorModel,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TaskMetrics {
    pub task: usize,
    pub epoch_losses: Vec<f64>,
    pub epoch_losses_d: Vec<f64>,
    /// Generated replay samples mixed into this task's training set.
    pub replay_samples: usize,
    /// Raw samples in the effective real pool (current + rehearsal copies
    /// or accumulated data).
    pub real_samples: usize,
    pub wall_seconds: f64,
}

fn seen_classes(continuum: &Continuum, upto: usize) -> Vec<u16> {
    let mut out: Vec<u16> = Vec::new();
    for t in 0..=upto {
        if let Ok(task) = continuum.task_meta(t) {
            out.extend(task.head_classes());
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Invoked after every epoch of classifier-bearing tasks, with the epoch
/// index; used for whole-stream accuracy curves.
pub type EpochHook<'h> = &'h mut dyn FnMut(&mut Classifier, usize) -> Result<()>;

/// Trains `models` on task `t` of `continuum` under the strategy in `state`.
/// The continuum cursor must already point at `t`.
pub fn train_task(
    state: &mut StrategyState,
    models: &mut TaskModels<'_>,
    continuum: &Continuum,
    t: usize,
    config: &TrainConfig,
    seed: u64,
    dev: &Device,
) -> Result<TaskMetrics> {
    train_task_hooked(state, models, continuum, t, config, seed, dev, None)
}

/// `train_task` with an optional per-epoch evaluation hook.
#[allow(clippy::too_many_arguments)]
pub fn train_task_hooked(
    state: &mut StrategyState,
    models: &mut TaskModels<'_>,
    continuum: &Continuum,
    t: usize,
    config: &TrainConfig,
    seed: u64,
    dev: &Device,
    mut hook: Option<EpochHook<'_>>,
) -> Result<TaskMetrics> {
    let start = std::time::Instant::now();
    let current = continuum.train_data(t)?;
    let mut rng = TensorRng::new(seed ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));

    // --- effective dataset -------------------------------------------------
    let replay_n = config.replay_n.unwrap_or(current.len());
    let mut synth: Option<SynthSet> = None;
    let mut real_owned: Option<SampleSet> = None;

    match state.kind {
        StrategyKind::Rehearsal { .. } => {
            let coreset = state.coreset.as_ref().expect("rehearsal state");
            real_owned = Some(coreset.balanced_mix(current));
        }
        StrategyKind::UpperboundData => {
            let acc = state.accumulated.as_mut().expect("upperbound-data state");
            acc.extend_from(current);
            real_owned = Some(acc.clone());
        }
        StrategyKind::GenerativeReplay => {
            if let Some(snap) = &state.snapshot {
                snap.verify_frozen()?;
                let budget = t * replay_n;
                let set = if snap.generator.family().is_conditional() {
                    snap.conditional_augment(&seen_classes(continuum, t.saturating_sub(1)), budget, seed ^ 0xA116)?
                } else if snap.classifier.is_some() {
                    snap.marginal_augment(t, replay_n, 1.0, seed ^ 0xA116, dev)?
                } else {
                    snap.unconditional_augment(budget, seed ^ 0xA116)?
                };
                synth = Some(set);
            }
        }
        StrategyKind::MarginalReplay { budget_factor } => {
            if let Some(snap) = &state.snapshot {
                snap.verify_frozen()?;
                synth = Some(snap.marginal_augment(t, replay_n, budget_factor, seed ^ 0xA116, dev)?);
            }
        }
        StrategyKind::ConditionalReplay { budget_factor } => {
            if let Some(snap) = &state.snapshot {
                snap.verify_frozen()?;
                let budget = (budget_factor * (t * replay_n) as f64).round() as usize;
                synth = Some(snap.conditional_augment(
                    &seen_classes(continuum, t.saturating_sub(1)),
                    budget,
                    seed ^ 0xA116,
                )?);
            }
        }
        _ => {}
    }

    let real: &SampleSet = real_owned.as_ref().unwrap_or(current);
    let pool = TrainPool::new(real, synth.as_ref());
    let mut metrics = TaskMetrics {
        task: t,
        replay_samples: synth.as_ref().map_or(0, |s| s.len()),
        real_samples: real.len(),
        ..Default::default()
    };

    // --- optimization loop -------------------------------------------------
    match models {
        TaskModels::Classifier(clf) => {
            train_classifier_task(state, clf, &pool, config, &mut rng, dev, &mut metrics, &mut hook)?;
        }
        TaskModels::Generator(gen) => {
            train_generator_task(state, gen, &pool, config, &mut rng, dev, &mut metrics)?;
        }
        TaskModels::Pair { classifier, generator } => {
            train_pair_task(state, classifier, generator, &pool, config, &mut rng, dev, &mut metrics, &mut hook)?;
        }
    }

    // --- end-of-task consolidation ------------------------------------------
    consolidate(state, models, continuum, t, current, config, seed, dev)?;

    metrics.wall_seconds = start.elapsed().as_secs_f64();
    Ok(metrics)
}

#[allow(clippy::too_many_arguments)]
fn train_classifier_task(
    state: &mut StrategyState,
    clf: &mut Classifier,
    pool: &TrainPool<'_>,
    config: &TrainConfig,
    rng: &mut TensorRng,
    dev: &Device,
    metrics: &mut TaskMetrics,
    hook: &mut Option<EpochHook<'_>>,
) -> Result<()> {
    let vars = clf.store().vars();
    let mut opt = config.optimizer.classifier_opt();
    let lambda = state.kind.lambda();
    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut n = 0usize;
        for idx in EpochIter::new(pool.len(), config.batch_size, rng) {
            let (x, labels) = pool.batch(&idx, Normalization::UnitInterval, dev)?;
            let lp = clf.forward(&x, true, rng)?;
            let mut loss = losses::nll_loss(&lp, &labels)?;
            if let Some(imp) = &state.importance {
                if imp.has_memory() && lambda > 0.0 {
                    loss = (loss + imp.penalty(&vars, lambda)?)?;
                }
            }
            let v = check_finite(scalar_f64(&loss)?, "classifier task loss")?;
            let grads = loss.backward()?;
            let steps = opt.step(&vars, &grads)?;
            if let Some(imp) = &mut state.importance {
                imp.si_accumulate(&steps, &vars)?;
            }
            loss_sum += v;
            n += 1;
        }
        metrics.epoch_losses.push(loss_sum / n.max(1) as f64);
        if let Some(h) = hook.as_mut() {
            h(clf, epoch)?;
        }
    }
    Ok(())
}

struct GanSteps {
    g_opt: Box<dyn Optimizer>,
    d_opt: Box<dyn Optimizer>,
    critic_steps: usize,
    counter: usize,
}

impl GanSteps {
    fn new(config: &TrainConfig, family: GenFamily) -> Self {
        let critic_steps = match family {
            GenFamily::Wgan | GenFamily::WganGp => CRITIC_STEPS_WASSERSTEIN,
            _ => 1,
        };
        Self {
            g_opt: config.optimizer.generator_opt(),
            d_opt: config.optimizer.generator_opt(),
            critic_steps,
            counter: 0,
        }
    }

    /// One adversarial update on a real batch. Returns (loss_d, loss_g).
    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        gen: &GeneratorModel,
        state: &StrategyState,
        lambda: f64,
        x_real: &candle_core::Tensor,
        labels: &[u16],
        rng: &mut TensorRng,
        dev: &Device,
    ) -> Result<(f64, Option<f64>)> {
        let family = gen.family();
        let b = x_real.dims()[0];
        let cond = family.is_conditional();
        let g_vars = gen.dec_store.vars();
        let d_vars = gen.critic_store.vars();

        // discriminator step
        let z = rng.randn(&[b, gen.arch.latent_dim], dev, gen.dtype())?;
        let fake_labels: Option<Vec<u16>> = cond.then(|| labels.to_vec());
        let fake = gen.generate(&z, fake_labels.as_deref())?.detach();
        let d_real = gen.discriminate(x_real, cond.then_some(labels))?;
        let d_fake = gen.discriminate(&fake, fake_labels.as_deref())?;
        let loss_d = match family {
            GenFamily::Gan | GenFamily::Cgan => losses::gan_losses(&d_real, &d_fake)?.0,
            GenFamily::Wgan => losses::wgan_losses(&d_real, &d_fake)?.0,
            GenFamily::WganGp => {
                let (w, _) = losses::wgan_losses(&d_real, &d_fake)?;
                (w + gen.gradient_penalty(x_real, &fake, WGAN_GP_LAMBDA, rng)?)?
            }
            _ => unreachable!("adversarial step on VAE family"),
        };
        let loss_d_v = check_finite(scalar_f64(&loss_d)?, "discriminator loss")?;
        let grads = loss_d.backward()?;
        self.d_opt.step(&d_vars, &grads)?;
        if family == GenFamily::Wgan {
            losses::wgan_weight_clip(&d_vars, WGAN_CLIP)?;
        }

        // generator step every `critic_steps` batches
        self.counter += 1;
        let mut loss_g_v = None;
        if self.counter % self.critic_steps == 0 {
            let z = rng.randn(&[b, gen.arch.latent_dim], dev, gen.dtype())?;
            let fake = gen.generate(&z, fake_labels.as_deref())?;
            let d_fake = gen.discriminate(&fake, fake_labels.as_deref())?;
            // non-saturating form: -E[log D(G(z))]; WGAN form: -E[D(G(z))]
            let mut loss_g = match family {
                GenFamily::Gan | GenFamily::Cgan => d_fake.log()?.mean_all()?.neg()?,
                _ => d_fake.mean_all()?.neg()?,
            };
            if let Some(imp) = &state.importance {
                if imp.has_memory() && lambda > 0.0 {
                    loss_g = (loss_g + imp.penalty(&gen.penalized_vars(), lambda)?)?;
                }
            }
            let v = check_finite(scalar_f64(&loss_g)?, "generator loss")?;
            let grads = loss_g.backward()?;
            self.g_opt.step(&g_vars, &grads)?;
            loss_g_v = Some(v);
        }
        Ok((loss_d_v, loss_g_v))
    }
}

fn train_generator_task(
    state: &mut StrategyState,
    gen: &mut GeneratorModel,
    pool: &TrainPool<'_>,
    config: &TrainConfig,
    rng: &mut TensorRng,
    dev: &Device,
    metrics: &mut TaskMetrics,
) -> Result<()> {
    let lambda = state.kind.lambda();
    let norm = gen.family().normalization();
    if gen.family().is_adversarial() {
        let mut steps = GanSteps::new(config, gen.family());
        for _epoch in 0..config.epochs {
            let (mut d_sum, mut g_sum, mut nd, mut ng) = (0.0, 0.0, 0usize, 0usize);
            for idx in EpochIter::new(pool.len(), config.batch_size, rng) {
                let (x, labels) = pool.batch(&idx, norm, dev)?;
                let (ld, lg) = steps.step(gen, state, lambda, &x, &labels, rng, dev)?;
                d_sum += ld;
                nd += 1;
                if let Some(lg) = lg {
                    g_sum += lg;
                    ng += 1;
                }
            }
            metrics.epoch_losses_d.push(d_sum / nd.max(1) as f64);
            metrics.epoch_losses.push(g_sum / ng.max(1) as f64);
        }
    } else {
        // VAE family: one Adam over encoder + decoder
        let mut vars = gen.dec_store.vars();
        vars.extend(gen.enc_store.vars());
        let mut opt = config.optimizer.generator_opt();
        let cond = gen.family().is_conditional();
        for _epoch in 0..config.epochs {
            let mut sum = 0.0;
            let mut n = 0usize;
            for idx in EpochIter::new(pool.len(), config.batch_size, rng) {
                let (x, labels) = pool.batch(&idx, norm, dev)?;
                let (x_hat, mu, sigma) = gen.vae_forward(&x, cond.then_some(labels.as_slice()), rng)?;
                let mut loss = losses::vae_loss(&x, &x_hat, &mu, &sigma)?;
                if let Some(imp) = &state.importance {
                    if imp.has_memory() && lambda > 0.0 {
                        loss = (loss + imp.penalty(&gen.penalized_vars(), lambda)?)?;
                    }
                }
                let v = check_finite(scalar_f64(&loss)?, "vae loss")?;
                let grads = loss.backward()?;
                opt.step(&vars, &grads)?;
                sum += v;
                n += 1;
            }
            metrics.epoch_losses.push(sum / n.max(1) as f64);
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_pair_task(
    state: &mut StrategyState,
    clf: &mut Classifier,
    gen: &mut GeneratorModel,
    pool: &TrainPool<'_>,
    config: &TrainConfig,
    rng: &mut TensorRng,
    dev: &Device,
    metrics: &mut TaskMetrics,
    hook: &mut Option<EpochHook<'_>>,
) -> Result<()> {
    let c_vars = clf.store().vars();
    let mut c_opt = config.optimizer.classifier_opt();
    let gen_norm = gen.family().normalization();
    if gen.family().is_adversarial() {
        let mut steps = GanSteps::new(config, gen.family());
        for epoch in 0..config.epochs {
            let (mut c_sum, mut d_sum, mut n) = (0.0, 0.0, 0usize);
            for idx in EpochIter::new(pool.len(), config.batch_size, rng) {
                let (xc, labels) = pool.batch(&idx, Normalization::UnitInterval, dev)?;
                let lp = clf.forward(&xc, true, rng)?;
                let loss_c = losses::nll_loss(&lp, &labels)?;
                let v = check_finite(scalar_f64(&loss_c)?, "pair classifier loss")?;
                let grads = loss_c.backward()?;
                c_opt.step(&c_vars, &grads)?;

                let (xg, _) = pool.batch(&idx, gen_norm, dev)?;
                let (ld, _) = steps.step(gen, state, 0.0, &xg, &labels, rng, dev)?;
                c_sum += v;
                d_sum += ld;
                n += 1;
            }
            metrics.epoch_losses.push(c_sum / n.max(1) as f64);
            metrics.epoch_losses_d.push(d_sum / n.max(1) as f64);
            if let Some(h) = hook.as_mut() {
                h(clf, epoch)?;
            }
        }
    } else {
        let mut g_vars = gen.dec_store.vars();
        g_vars.extend(gen.enc_store.vars());
        let mut g_opt = config.optimizer.generator_opt();
        let cond = gen.family().is_conditional();
        for epoch in 0..config.epochs {
            let (mut c_sum, mut g_sum, mut n) = (0.0, 0.0, 0usize);
            for idx in EpochIter::new(pool.len(), config.batch_size, rng) {
                let (xc, labels) = pool.batch(&idx, Normalization::UnitInterval, dev)?;
                let lp = clf.forward(&xc, true, rng)?;
                let loss_c = losses::nll_loss(&lp, &labels)?;
                let vc = check_finite(scalar_f64(&loss_c)?, "pair classifier loss")?;
                let grads = loss_c.backward()?;
                c_opt.step(&c_vars, &grads)?;

                let (xg, _) = pool.batch(&idx, gen_norm, dev)?;
                let (x_hat, mu, sigma) = gen.vae_forward(&xg, cond.then_some(labels.as_slice()), rng)?;
                let loss_g = losses::vae_loss(&xg, &x_hat, &mu, &sigma)?;
                let vg = check_finite(scalar_f64(&loss_g)?, "pair vae loss")?;
                let grads = loss_g.backward()?;
                g_opt.step(&g_vars, &grads)?;
                c_sum += vc;
                g_sum += vg;
                n += 1;
            }
            metrics.epoch_losses.push(c_sum / n.max(1) as f64);
            metrics.epoch_losses_d.push(g_sum / n.max(1) as f64);
            if let Some(h) = hook.as_mut() {
                h(clf, epoch)?;
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn consolidate(
    state: &mut StrategyState,
    models: &mut TaskModels<'_>,
    continuum: &Continuum,
    t: usize,
    current: &SampleSet,
    config: &TrainConfig,
    seed: u64,
    dev: &Device,
) -> Result<()> {
    match state.kind {
        StrategyKind::Ewc { .. } => {
            let imp = state.importance.as_mut().expect("ewc state");
            match models {
                TaskModels::Classifier(clf) => {
                    let fisher = fisher_diag_classifier(clf, current, config.fisher_samples, seed ^ 0xF1, dev)?;
                    imp.ewc_consolidate(clf.store().snapshot()?, fisher)?;
                }
                TaskModels::Generator(gen) => {
                    let n = config.fisher_samples.unwrap_or(1024);
                    let fisher = fisher_diag_generator(gen, current, n, seed ^ 0xF1, dev)?;
                    let anchor: Vec<_> = gen
                        .penalized_vars()
                        .iter()
                        .map(|v| v.as_tensor().copy())
                        .collect::<std::result::Result<_, _>>()?;
                    imp.ewc_consolidate(anchor, fisher)?;
                }
                TaskModels::Pair { classifier, .. } => {
                    let fisher = fisher_diag_classifier(classifier, current, config.fisher_samples, seed ^ 0xF1, dev)?;
                    imp.ewc_consolidate(classifier.store().snapshot()?, fisher)?;
                }
            }
        }
        StrategyKind::Si { .. } => {
            let imp = state.importance.as_mut().expect("si state");
            let anchor = match models {
                TaskModels::Classifier(clf) => clf.store().snapshot()?,
                TaskModels::Pair { classifier, .. } => classifier.store().snapshot()?,
                TaskModels::Generator(gen) => gen
                    .penalized_vars()
                    .iter()
                    .map(|v| v.as_tensor().copy())
                    .collect::<std::result::Result<_, _>>()?,
            };
            imp.si_consolidate(anchor)?;
        }
        StrategyKind::ImmMean | StrategyKind::ImmMode => {
            let imp = state.importance.as_mut().expect("imm state");
            let (anchor, sigma) = match models {
                TaskModels::Classifier(clf) => {
                    let anchor = clf.store().snapshot()?;
                    let sigma = if state.kind == StrategyKind::ImmMode {
                        let mut f = fisher_diag_classifier(clf, current, config.fisher_samples, seed ^ 0xF2, dev)?;
                        for t in f.iter_mut() {
                            // damp zeros so the mode-merge stays well-posed
                            *t = (t.clone() + 1e-8)?;
                        }
                        Some(f)
                    } else {
                        None
                    };
                    (anchor, sigma)
                }
                _ => {
                    return Err(Error::InvalidConfig(
                        "IMM is defined for classifier experiments".into(),
                    ))
                }
            };
            imp.imm_record(anchor, sigma)?;
        }
        StrategyKind::Rehearsal { .. } => {
            state.coreset.as_mut().expect("rehearsal state").update(current);
        }
        StrategyKind::GenerativeReplay
        | StrategyKind::MarginalReplay { .. }
        | StrategyKind::ConditionalReplay { .. } => {
            let (gen_frozen, clf_frozen) = match models {
                TaskModels::Generator(gen) => (gen.clone_model()?, None),
                TaskModels::Pair { classifier, generator } => {
                    let keep_clf = matches!(state.kind, StrategyKind::MarginalReplay { .. })
                        || (matches!(state.kind, StrategyKind::GenerativeReplay)
                            && !generator.family().is_conditional());
                    let clf = if keep_clf { Some(clone_classifier(classifier, dev)?) } else { None };
                    (generator.clone_model()?, clf)
                }
                TaskModels::Classifier(_) => {
                    return Err(Error::InvalidConfig(
                        "generative replay needs a generator in the loop".into(),
                    ))
                }
            };
            // the old snapshot is dropped wholesale; replay memory is a
            // rolling replacement, not an archive
            state.snapshot = Some(ReplaySnapshot::new(gen_frozen, clf_frozen, t + 1)?);
        }
        _ => {}
    }
    let _ = continuum;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::classifier::ClassifierArch;
    use crate::models::{GenArch, GenBackbone};
    use crate::scenarios;

    fn toy_split() -> crate::data::DatasetSplit {
        let mut train = SampleSet::default();
        let mut val = SampleSet::default();
        let mut test = SampleSet::default();
        let mut rng = TensorRng::new(1);
        for c in 0..10u16 {
            for _ in 0..12 {
                let img: Vec<u8> = (0..784).map(|_| (rng.gen_f64() * 255.0) as u8).collect();
                train.push(&img, c);
            }
            for _ in 0..3 {
                let img: Vec<u8> = (0..784).map(|_| (rng.gen_f64() * 255.0) as u8).collect();
                val.push(&img, c);
                test.push(&img, c);
            }
        }
        crate::data::DatasetSplit {
            corpus: crate::data::Corpus::Mnist,
            normalization: Normalization::UnitInterval,
            train,
            val,
            test,
        }
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_size: 8,
            optimizer: OptimizerSpec::sgd_defaults(),
            replay_n: Some(20),
            fisher_samples: Some(8),
        }
    }

    fn run_two_tasks(kind: StrategyKind, split: &crate::data::DatasetSplit) -> u64 {
        let dev = Device::Cpu;
        let mut continuum = scenarios::build_disjoint(split, 2).unwrap();
        let mut state = StrategyState::new(kind).unwrap();
        let mut rng = TensorRng::new(42);
        let mut clf = Classifier::new(ClassifierArch::Mlp, 10, &mut rng, &dev).unwrap();
        for t in 0..2 {
            if t > 0 {
                continuum.advance().unwrap();
            }
            let mut models = TaskModels::Classifier(&mut clf);
            train_task(&mut state, &mut models, &continuum, t, &quick_config(), 7, &dev).unwrap();
        }
        clf.store().digest().unwrap()
    }

    #[test]
    fn fine_tune_equals_ewc_lambda_zero() {
        let split = toy_split();
        let ft = run_two_tasks(StrategyKind::FineTune, &split);
        let ewc0 = run_two_tasks(StrategyKind::Ewc { lambda: 0.0 }, &split);
        assert_eq!(ft, ewc0, "lambda=0 EWC must match fine-tune bit for bit");
    }

    #[test]
    fn rehearsal_balances_and_snapshots_grow() {
        let dev = Device::Cpu;
        let split = toy_split();
        let mut continuum = scenarios::build_disjoint(&split, 2).unwrap();
        let mut state = StrategyState::new(StrategyKind::Rehearsal { k: 3 }).unwrap();
        let mut rng = TensorRng::new(2);
        let mut clf = Classifier::new(ClassifierArch::Mlp, 10, &mut rng, &dev).unwrap();
        let m0 = {
            let mut models = TaskModels::Classifier(&mut clf);
            train_task(&mut state, &mut models, &continuum, 0, &quick_config(), 3, &dev).unwrap()
        };
        assert_eq!(m0.real_samples, continuum.task_meta(0).unwrap().train.len());
        assert_eq!(state.coreset.as_ref().unwrap().stored_count(), 15); // 5 classes x 3
        continuum.advance().unwrap();
        let m1 = {
            let mut models = TaskModels::Classifier(&mut clf);
            train_task(&mut state, &mut models, &continuum, 1, &quick_config(), 3, &dev).unwrap()
        };
        // current 60 + 5 old classes balanced to 12 each
        assert_eq!(m1.real_samples, 60 + 5 * 12);
    }

    #[test]
    fn generative_replay_budget_and_horizon() {
        let dev = Device::Cpu;
        let split = toy_split();
        let mut continuum = scenarios::build_disjoint(&split, 2).unwrap();
        let mut state = StrategyState::new(StrategyKind::GenerativeReplay).unwrap();
        let mut rng = TensorRng::new(5);
        let mut arch = GenArch::new(GenFamily::Gan, GenBackbone::Mlp, 8, 10);
        arch.latent_dim = 4;
        let mut gen = GeneratorModel::new(arch, &mut rng, &dev).unwrap();
        let cfg = quick_config();
        let m0 = {
            let mut models = TaskModels::Generator(&mut gen);
            train_task(&mut state, &mut models, &continuum, 0, &cfg, 9, &dev).unwrap()
        };
        assert_eq!(m0.replay_samples, 0);
        let snap_digest = state.snapshot.as_ref().unwrap().digest();
        assert_eq!(state.snapshot.as_ref().unwrap().horizon, 1);
        continuum.advance().unwrap();
        let m1 = {
            let mut models = TaskModels::Generator(&mut gen);
            train_task(&mut state, &mut models, &continuum, 1, &cfg, 9, &dev).unwrap()
        };
        assert_eq!(m1.replay_samples, 20); // t=1, N=20
        let snap = state.snapshot.as_ref().unwrap();
        assert_eq!(snap.horizon, 2);
        assert_ne!(snap.digest(), snap_digest, "snapshot is replaced, not accumulated");
    }

    #[test]
    fn causality_guard_trips_on_future_task() {
        let dev = Device::Cpu;
        let split = toy_split();
        let continuum = scenarios::build_disjoint(&split, 2).unwrap();
        let mut state = StrategyState::new(StrategyKind::FineTune).unwrap();
        let mut rng = TensorRng::new(2);
        let mut clf = Classifier::new(ClassifierArch::Mlp, 10, &mut rng, &dev).unwrap();
        let mut models = TaskModels::Classifier(&mut clf);
        let err = train_task(&mut state, &mut models, &continuum, 1, &quick_config(), 3, &dev);
        assert!(matches!(err, Err(Error::CausalityViolation(_))));
    }

    #[test]
    fn upperbound_data_accumulates() {
        let dev = Device::Cpu;
        let split = toy_split();
        let mut continuum = scenarios::build_disjoint(&split, 2).unwrap();
        let mut state = StrategyState::new(StrategyKind::UpperboundData).unwrap();
        let mut rng = TensorRng::new(6);
        let mut clf = Classifier::new(ClassifierArch::Mlp, 10, &mut rng, &dev).unwrap();
        {
            let mut models = TaskModels::Classifier(&mut clf);
            train_task(&mut state, &mut models, &continuum, 0, &quick_config(), 1, &dev).unwrap();
        }
        continuum.advance().unwrap();
        let m1 = {
            let mut models = TaskModels::Classifier(&mut clf);
            train_task(&mut state, &mut models, &continuum, 1, &quick_config(), 1, &dev).unwrap()
        };
        assert_eq!(m1.real_samples, split.train.len());
    }
}
