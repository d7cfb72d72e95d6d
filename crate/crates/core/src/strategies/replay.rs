//! Replay memories: raw-sample coresets with copy-balancing, and frozen
//! generator snapshots for marginal / conditional generative replay.

use std::collections::BTreeMap;

use candle_core::Device;

use crate::data::{Normalization, SampleSet, IMAGE_PIXELS};
use crate::error::{Error, Result};
use crate::models::batch::SynthSet;
use crate::models::classifier::Classifier;
use crate::models::GeneratorModel;

/// Raw-sample memory: up to `k` samples per class, first-come in stream
/// order so the selection is deterministic and seed-free.
#[derive(Debug, Clone)]
pub struct Coreset {
    pub k: usize,
    pub per_class: BTreeMap<u16, SampleSet>,
}

impl Coreset {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("coreset needs k >= 1".into()));
        }
        Ok(Self { k, per_class: BTreeMap::new() })
    }

    /// Stores the first `k` samples of every class new to the memory;
    /// classes already stored are left untouched.
    pub fn update(&mut self, task_data: &SampleSet) {
        let mut fresh: BTreeMap<u16, SampleSet> = BTreeMap::new();
        for i in 0..task_data.len() {
            let label = task_data.labels[i];
            if self.per_class.contains_key(&label) {
                continue;
            }
            let slot = fresh.entry(label).or_default();
            if slot.len() < self.k {
                slot.push(task_data.image(i), label);
            }
        }
        self.per_class.append(&mut fresh);
    }

    pub fn stored_count(&self) -> usize {
        self.per_class.values().map(|s| s.len()).sum()
    }

    pub fn stored_bytes(&self) -> usize {
        self.per_class
            .values()
            .map(|s| s.len() * (IMAGE_PIXELS + 2))
            .sum()
    }

    /// Balanced training set: stored samples are duplicated (cycling) until
    /// every stored class reaches the per-class count of the current task,
    /// then concatenated with the current data.
    pub fn balanced_mix(&self, current: &SampleSet) -> SampleSet {
        if self.per_class.is_empty() {
            return current.clone();
        }
        let mut current_counts: BTreeMap<u16, usize> = BTreeMap::new();
        for &l in &current.labels {
            *current_counts.entry(l).or_default() += 1;
        }
        let target = current_counts.values().copied().max().unwrap_or(0);
        let mut out = current.clone();
        for (&label, stored) in &self.per_class {
            if current_counts.contains_key(&label) || stored.is_empty() {
                continue;
            }
            for j in 0..target {
                out.push(stored.image(j % stored.len()), label);
            }
        }
        out
    }
}

/// Frozen past models. Marginal replay keeps generator + classifier;
/// conditional replay keeps only a conditional generator.
pub struct ReplaySnapshot {
    pub generator: GeneratorModel,
    pub classifier: Option<Classifier>,
    /// Number of past tasks this snapshot covers.
    pub horizon: usize,
    digest: u64,
}

const GEN_CHUNK: usize = 500;

impl ReplaySnapshot {
    pub fn new(generator: GeneratorModel, classifier: Option<Classifier>, horizon: usize) -> Result<Self> {
        let digest = generator.digest()?;
        Ok(Self { generator, classifier, horizon, digest })
    }

    /// Parameter digest frozen at construction; changing outputs would mean
    /// the snapshot mutated.
    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn verify_frozen(&self) -> Result<()> {
        let now = self.generator.digest()?;
        if now != self.digest {
            return Err(Error::InvalidSnapshot(format!(
                "frozen generator drifted: {:#x} != {:#x}",
                now, self.digest
            )));
        }
        Ok(())
    }

    /// Marginal replay: draw from the frozen generator and label with the
    /// frozen classifier's argmax. Budget: `t * n` samples (balanced mode)
    /// or `factor * t * n` (unbalanced).
    pub fn marginal_augment(
        &self,
        t: usize,
        n_per_task: usize,
        budget_factor: f64,
        seed: u64,
        dev: &Device,
    ) -> Result<SynthSet> {
        let clf = self
            .classifier
            .as_ref()
            .ok_or_else(|| Error::InvalidSnapshot("marginal replay needs a frozen classifier".into()))?;
        // classifier is behind an immutable snapshot; clone params into a
        // scratch model for batched prediction
        let total = ((budget_factor * t as f64 * n_per_task as f64).round() as usize).max(0);
        let norm = self.generator.family().normalization();
        let mut out = SynthSet::default();
        let mut scratch = clone_classifier(clf, dev)?;
        let mut chunk_id = 0u64;
        let mut produced = 0usize;
        while produced < total {
            let n = GEN_CHUNK.min(total - produced);
            let images = self.generator.sample(n, seed ^ chunk_id.wrapping_mul(0x9e37_79b9))?;
            let unit = match norm {
                Normalization::UnitInterval => images.clone(),
                Normalization::SignedUnit => ((&images + 1.0)? * 0.5)?.clamp(0.0, 1.0)?,
            };
            let labels = scratch.predict(&unit)?;
            out.push_tensor(&images, &labels, norm)?;
            produced += n;
            chunk_id += 1;
        }
        Ok(out)
    }

    /// Conditional replay: per-class budget `total / |classes|` (floor,
    /// remainder to the lowest class ids); labels are the conditioning.
    pub fn conditional_augment(&self, seen_classes: &[u16], total_budget: usize, seed: u64) -> Result<SynthSet> {
        if !self.generator.family().is_conditional() {
            return Err(Error::UnsupportedFamily(
                "conditional replay needs a conditional generator".into(),
            ));
        }
        if seen_classes.is_empty() {
            return Err(Error::InvalidParameter("conditional replay with no seen classes".into()));
        }
        let norm = self.generator.family().normalization();
        let mut out = SynthSet::default();
        if total_budget == 0 {
            return Ok(out);
        }
        let (images, labels) = self.generator.sample_balanced(seen_classes, total_budget, seed)?;
        out.push_tensor(&images, &labels, norm)?;
        Ok(out)
    }

    /// Unlabeled replay for generator-only training (labels set to 0).
    pub fn unconditional_augment(&self, total: usize, seed: u64) -> Result<SynthSet> {
        let norm = self.generator.family().normalization();
        let mut out = SynthSet::default();
        let mut produced = 0usize;
        let mut chunk_id = 0u64;
        while produced < total {
            let n = GEN_CHUNK.min(total - produced);
            let images = self.generator.sample(n, seed ^ 0x5EED ^ chunk_id.wrapping_mul(0x9e37_79b9))?;
            out.push_tensor(&images, &vec![0u16; n], norm)?;
            produced += n;
            chunk_id += 1;
        }
        Ok(out)
    }

    pub fn param_bytes(&self) -> usize {
        let gen_params = self.generator.param_count();
        let clf_params = self
            .classifier
            .as_ref()
            .map(|c| c.store().param_count())
            .unwrap_or(0);
        (gen_params + clf_params) * 4
    }
}

pub fn clone_classifier(clf: &Classifier, dev: &Device) -> Result<Classifier> {
    let mut rng = crate::nn::TensorRng::new(0);
    let mut out = Classifier::new(clf.arch(), clf.n_classes(), &mut rng, dev)?;
    out.store().load(&clf.store().snapshot()?)?;
    // carry batch-norm running statistics over for eval parity
    if let (Classifier::Cnn(src), Classifier::Cnn(dst)) = (clf, &mut out) {
        dst.set_bn_state(src.bn_state());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GenArch, GenBackbone, GenFamily};
    use crate::nn::TensorRng;

    fn class_block(label: u16, n: usize, fill: u8) -> SampleSet {
        let mut s = SampleSet::default();
        for i in 0..n {
            let mut img = vec![fill; IMAGE_PIXELS];
            img[0] = i as u8;
            s.push(&img, label);
        }
        s
    }

    #[test]
    fn coreset_stores_first_k_per_class() {
        let mut c = Coreset::new(10).unwrap();
        let mut data = class_block(0, 30, 1);
        data.extend_from(&class_block(1, 4, 2));
        data.extend_from(&class_block(2, 25, 3));
        c.update(&data);
        assert_eq!(c.per_class[&0].len(), 10);
        assert_eq!(c.per_class[&1].len(), 4);
        assert_eq!(c.per_class[&2].len(), 10);
        assert_eq!(c.stored_count(), 24);
        // first-k rule: stored sample 0 of class 0 is the stream's first
        assert_eq!(c.per_class[&0].image(0)[0], 0);
    }

    #[test]
    fn coreset_update_is_idempotent() {
        let mut c = Coreset::new(5).unwrap();
        let data = class_block(3, 20, 7);
        c.update(&data);
        let before: Vec<u8> = c.per_class[&3].images.clone();
        c.update(&data);
        assert_eq!(c.per_class[&3].images, before);
        assert_eq!(c.stored_count(), 5);
    }

    #[test]
    fn balanced_mix_duplicates_to_uniform_histogram() {
        let mut c = Coreset::new(10).unwrap();
        c.update(&class_block(0, 10, 1));
        c.update(&class_block(1, 10, 2));
        let current = class_block(2, 5000, 3);
        let mixed = c.balanced_mix(&current);
        let mut counts = BTreeMap::new();
        for &l in &mixed.labels {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        assert_eq!(counts[&0], 5000);
        assert_eq!(counts[&1], 5000);
        assert_eq!(counts[&2], 5000);
    }

    #[test]
    fn empty_coreset_mix_is_identity() {
        let c = Coreset::new(10).unwrap();
        let current = class_block(0, 7, 1);
        let mixed = c.balanced_mix(&current);
        assert_eq!(mixed.images, current.images);
        assert_eq!(mixed.labels, current.labels);
    }

    fn small_gan(cond: bool) -> GeneratorModel {
        let mut rng = TensorRng::new(3);
        let family = if cond { GenFamily::Cgan } else { GenFamily::Gan };
        let mut arch = GenArch::new(family, GenBackbone::Mlp, 8, 10);
        arch.latent_dim = 4;
        GeneratorModel::new(arch, &mut rng, &Device::Cpu).unwrap()
    }

    #[test]
    fn marginal_budget_arithmetic() {
        let dev = Device::Cpu;
        let gen = small_gan(false);
        let mut rng = TensorRng::new(4);
        let clf = Classifier::new(crate::models::ClassifierArch::Mlp, 10, &mut rng, &dev).unwrap();
        let snap = ReplaySnapshot::new(gen, Some(clf), 3).unwrap();
        let balanced = snap.marginal_augment(3, 500, 1.0, 1, &dev).unwrap();
        assert_eq!(balanced.len(), 1500);
        let unbalanced = snap.marginal_augment(3, 500, 0.1, 1, &dev).unwrap();
        assert_eq!(unbalanced.len(), 150);
        assert!(balanced.labels.iter().all(|&l| l < 10));
    }

    #[test]
    fn marginal_without_classifier_fails() {
        let dev = Device::Cpu;
        let snap = ReplaySnapshot::new(small_gan(false), None, 1).unwrap();
        assert!(matches!(
            snap.marginal_augment(1, 10, 1.0, 0, &dev),
            Err(Error::InvalidSnapshot(_))
        ));
    }

    #[test]
    fn conditional_budget_split() {
        let snap = ReplaySnapshot::new(small_gan(true), None, 3).unwrap();
        let out = snap.conditional_augment(&[0, 1, 2], 10, 5).unwrap();
        let mut counts = BTreeMap::new();
        for &l in &out.labels {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        assert_eq!(counts[&0], 4);
        assert_eq!(counts[&1], 3);
        assert_eq!(counts[&2], 3);
        // deviation from uniform <= 1
        let max = counts.values().max().unwrap();
        let min = counts.values().min().unwrap();
        assert!(max - min <= 1);
    }

    #[test]
    fn conditional_replay_rejects_unconditional_generator() {
        let snap = ReplaySnapshot::new(small_gan(false), None, 1).unwrap();
        assert!(matches!(
            snap.conditional_augment(&[0], 5, 0),
            Err(Error::UnsupportedFamily(_))
        ));
    }

    #[test]
    fn snapshot_digest_is_stable() {
        let snap = ReplaySnapshot::new(small_gan(false), None, 2).unwrap();
        snap.verify_frozen().unwrap();
        let _ = snap.unconditional_augment(20, 9).unwrap();
        snap.verify_frozen().unwrap();
    }
}
