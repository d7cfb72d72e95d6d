//! Fitting capacity: train a fresh classifier on a generator's labeled
//! samples, report its accuracy on the real test set. Conditional models
//! label their own samples; unconditional models are annotated by an expert
//! classifier trained on real i.i.d. data.
//!
//! The classifier-training job here is deliberately self-contained: it
//! shares no state with the run that produced the generator.

use candle_core::Device;

use crate::data::{Normalization, SampleSet};
use crate::error::{Error, Result};
use crate::models::batch::{EpochIter, SynthSet, TrainPool};
use crate::models::classifier::{Classifier, ClassifierArch};
use crate::models::losses::nll_loss;
use crate::models::GeneratorModel;
use crate::nn::{check_finite, scalar_f64, Adam, Optimizer, Sgd, TensorRng};

use super::eval::accuracy;

#[derive(Debug, Clone, Copy)]
pub struct FicConfig {
    /// Size of the generated training set (split 90/10 into train/val).
    pub train_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for FicConfig {
    fn default() -> Self {
        Self {
            train_size: 55_000,
            epochs: 25,
            batch_size: 64,
            lr: 0.01,
            beta1: 0.5,
            beta2: 0.999,
        }
    }
}

pub enum Annotator<'a> {
    /// Labels are the conditioning classes; the generator must be conditional.
    Conditional,
    /// Labels are the argmax of an expert classifier trained on real data.
    Expert(&'a mut Classifier),
}

impl Annotator<'_> {
    pub fn tag(&self) -> &'static str {
        match self {
            Annotator::Conditional => "conditional",
            Annotator::Expert(_) => "expert",
        }
    }
}

/// Draws `cfg.train_size` labeled samples from `generator`.
pub fn generate_labeled_set(
    generator: &GeneratorModel,
    annotator: &mut Annotator<'_>,
    classes: &[u16],
    cfg: &FicConfig,
    seed: u64,
    _dev: &Device,
) -> Result<SynthSet> {
    let norm = generator.family().normalization();
    let mut synth = SynthSet::default();
    let chunk = 500usize;
    let mut produced = 0usize;
    let mut chunk_id = 0u64;
    while produced < cfg.train_size {
        let n = chunk.min(cfg.train_size - produced);
        let chunk_seed = seed ^ (0x51ED_5EED ^ chunk_id.wrapping_mul(0x9e37_79b9));
        match annotator {
            Annotator::Conditional => {
                if !generator.family().is_conditional() {
                    return Err(Error::UnsupportedFamily(
                        "conditional annotation on an unconditional family".into(),
                    ));
                }
                let (images, labels) = generator.sample_balanced(classes, n, chunk_seed)?;
                synth.push_tensor(&images, &labels, norm)?;
            }
            Annotator::Expert(expert) => {
                let images = generator
                    .sample(n, chunk_seed)
                    .map_err(|e| Error::UpstreamError(format!("generation failed: {e}")))?;
                // expert consumes unit-interval pixels
                let unit = match norm {
                    Normalization::UnitInterval => images.clone(),
                    Normalization::SignedUnit => ((&images + 1.0)? * 0.5)?.clamp(0.0, 1.0)?,
                };
                let labels = expert.predict(&unit)?;
                synth.push_tensor(&images, &labels, norm)?;
            }
        }
        produced += n;
        chunk_id += 1;
    }
    Ok(synth)
}

pub struct TrainOutcome {
    pub classifier: Classifier,
    pub train_losses: Vec<f64>,
    pub val_accuracies: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum OptSpec {
    Adam { lr: f64, beta1: f64, beta2: f64 },
    Sgd { lr: f64, momentum: f64 },
}

/// Plain supervised training over a pool, with optional best-epoch selection
/// on a validation accuracy probe.
#[allow(clippy::too_many_arguments)]
pub fn train_classifier(
    arch: ClassifierArch,
    n_classes: usize,
    train: &TrainPool<'_>,
    val: Option<&SampleSet>,
    opt: OptSpec,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    dev: &Device,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::InvalidData("empty training pool".into()));
    }
    let mut init_rng = TensorRng::new(seed);
    let mut clf = Classifier::new(arch, n_classes, &mut init_rng, dev)?;
    let mut rng = init_rng.fork(1);
    let mut opt: Box<dyn Optimizer> = match opt {
        OptSpec::Adam { lr, beta1, beta2 } => Box::new(Adam::new(lr, beta1, beta2)),
        OptSpec::Sgd { lr, momentum } => Box::new(Sgd::new(lr, momentum)),
    };
    let vars = clf.store().vars();

    let mut train_losses = Vec::with_capacity(epochs);
    let mut val_accuracies = Vec::with_capacity(epochs);
    let mut best = (0usize, f64::NEG_INFINITY, None::<Vec<candle_core::Tensor>>);

    for epoch in 0..epochs {
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for idx in EpochIter::new(train.len(), batch_size, &mut rng) {
            let (x, labels) = train.batch(&idx, Normalization::UnitInterval, dev)?;
            let lp = clf.forward(&x, true, &mut rng)?;
            let loss = nll_loss(&lp, &labels)?;
            let loss_v = check_finite(scalar_f64(&loss)?, "classifier training")?;
            let grads = loss.backward()?;
            opt.step(&vars, &grads)?;
            epoch_loss += loss_v;
            batches += 1;
        }
        train_losses.push(epoch_loss / batches.max(1) as f64);
        if let Some(val_set) = val {
            let acc = accuracy(&mut clf, val_set, dev, None)?;
            val_accuracies.push(acc);
            if acc > best.1 {
                best = (epoch, acc, Some(clf.store().snapshot()?));
            }
        }
    }
    if let (Some(snapshot), true) = (&best.2, val.is_some()) {
        clf.store().load(snapshot)?;
    }
    Ok(TrainOutcome {
        classifier: clf,
        train_losses,
        val_accuracies,
        best_epoch: best.0,
    })
}

/// Validation split carved from generated data: last 10%, as real samples.
fn synth_split(synth: &SynthSet) -> (SynthSet, SampleSet) {
    let n = synth.len();
    let n_val = n / 10;
    let n_train = n - n_val;
    let train = SynthSet {
        images: synth.images[..n_train * 784].to_vec(),
        labels: synth.labels[..n_train].to_vec(),
    };
    let mut val = SampleSet::default();
    for i in n_train..n {
        let img: Vec<u8> = synth.image(i).iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        val.push(&img, synth.labels[i]);
    }
    (train, val)
}

/// The fitting-capacity measurement itself.
#[allow(clippy::too_many_arguments)]
pub fn fitting_capacity(
    generator: &GeneratorModel,
    annotator: &mut Annotator<'_>,
    classes: &[u16],
    real_test: &SampleSet,
    n_classes: usize,
    cfg: &FicConfig,
    seed: u64,
    dev: &Device,
) -> Result<f64> {
    let synth = generate_labeled_set(generator, annotator, classes, cfg, seed, dev)?;
    let (train_synth, val) = synth_split(&synth);
    let empty = SampleSet::default();
    let pool = TrainPool::new(&empty, Some(&train_synth));
    let outcome = train_classifier(
        ClassifierArch::CnnRegularized,
        n_classes,
        &pool,
        Some(&val),
        OptSpec::Adam { lr: cfg.lr, beta1: cfg.beta1, beta2: cfg.beta2 },
        cfg.epochs,
        cfg.batch_size,
        seed ^ 0xF1C,
        dev,
    )?;
    let mut clf = outcome.classifier;
    accuracy(&mut clf, real_test, dev, None)
}

/// Accuracy of classifiers trained on the first `k` real samples per class,
/// for each `k`; the real-data comparison curve for rehearsal.
pub fn k_shot_curve(
    train: &SampleSet,
    test: &SampleSet,
    n_classes: usize,
    ks: &[usize],
    epochs: usize,
    seed: u64,
    dev: &Device,
) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut subset = SampleSet::default();
        let mut counts = vec![0usize; n_classes];
        for i in 0..train.len() {
            let c = train.labels[i] as usize;
            if counts[c] < k {
                counts[c] += 1;
                subset.push(train.image(i), train.labels[i]);
            }
        }
        let pool = TrainPool::new(&subset, None);
        let outcome = train_classifier(
            ClassifierArch::CnnRegularized,
            n_classes,
            &pool,
            None,
            OptSpec::Adam { lr: 0.01, beta1: 0.5, beta2: 0.999 },
            epochs,
            64.min(subset.len().max(2)),
            seed ^ k as u64,
            dev,
        )?;
        let mut clf = outcome.classifier;
        out.push((k, accuracy(&mut clf, test, dev, None)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GenArch, GenBackbone, GenFamily};

    #[test]
    fn conditional_labels_are_balanced() {
        let dev = Device::Cpu;
        let mut rng = TensorRng::new(1);
        let mut arch = GenArch::new(GenFamily::Cgan, GenBackbone::Mlp, 8, 10);
        arch.latent_dim = 4;
        let g = GeneratorModel::new(arch, &mut rng, &dev).unwrap();
        let cfg = FicConfig { train_size: 40, epochs: 1, ..Default::default() };
        let classes: Vec<u16> = (0..4).collect();
        let set = generate_labeled_set(&g, &mut Annotator::Conditional, &classes, &cfg, 7, &dev).unwrap();
        assert_eq!(set.len(), 40);
        for c in 0..4u16 {
            assert_eq!(set.labels.iter().filter(|&&l| l == c).count(), 10);
        }
    }

    #[test]
    fn fic_is_deterministic_given_seed() {
        let dev = Device::Cpu;
        let mut rng = TensorRng::new(2);
        let mut arch = GenArch::new(GenFamily::Cvae, GenBackbone::Mlp, 8, 4);
        arch.latent_dim = 4;
        let g = GeneratorModel::new(arch, &mut rng, &dev).unwrap();
        let mut test = SampleSet::default();
        let mut trng = TensorRng::new(3);
        for i in 0..40 {
            let img: Vec<u8> = (0..784).map(|_| (trng.gen_f64() * 255.0) as u8).collect();
            test.push(&img, (i % 4) as u16);
        }
        let cfg = FicConfig { train_size: 80, epochs: 2, ..Default::default() };
        let classes: Vec<u16> = (0..4).collect();
        let a = fitting_capacity(&g, &mut Annotator::Conditional, &classes, &test, 4, &cfg, 11, &dev).unwrap();
        let b = fitting_capacity(&g, &mut Annotator::Conditional, &classes, &test, 4, &cfg, 11, &dev).unwrap();
        assert_eq!(a, b);
    }
}
