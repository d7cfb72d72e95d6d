//! Experiment configuration: a flat, human-editable TOML file, schema
//! validated, hashed over its canonicalized content.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Corpus, Normalization};
use crate::error::{Error, Result};
use crate::models::classifier::ClassifierArch;
use crate::models::{GenBackbone, GenFamily};
use crate::scenarios::FellowshipSetting;
use crate::strategies::{OptimizerSpec, StrategyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioSpecKind {
    Disjoint,
    Rotation,
    Permutation,
    FellowshipDisjoint,
    FellowshipJoint,
    FellowshipLabeled,
}

impl ScenarioSpecKind {
    pub fn is_fellowship(&self) -> bool {
        matches!(
            self,
            ScenarioSpecKind::FellowshipDisjoint
                | ScenarioSpecKind::FellowshipJoint
                | ScenarioSpecKind::FellowshipLabeled
        )
    }

    pub fn fellowship_setting(&self) -> Option<FellowshipSetting> {
        match self {
            ScenarioSpecKind::FellowshipDisjoint => Some(FellowshipSetting::Disjoint),
            ScenarioSpecKind::FellowshipJoint => Some(FellowshipSetting::Joint),
            ScenarioSpecKind::FellowshipLabeled => Some(FellowshipSetting::Labeled),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioSpecKind,
    #[serde(default = "default_n_tasks")]
    pub n_tasks: usize,
    /// Transform seed for rotation/permutation streams.
    #[serde(default)]
    pub seed: u64,
}

fn default_n_tasks() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Classification stream (fills the accuracy matrix).
    Classifier,
    /// Generative stream (fills FID / fitting-capacity trajectories).
    Generator,
    /// Classification with a generator in the loop (marginal/conditional replay).
    Pair,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default = "default_classifier_arch")]
    pub classifier: ClassifierArch,
    #[serde(default)]
    pub family: Option<GenFamily>,
    #[serde(default = "default_backbone")]
    pub backbone: GenBackbone,
    /// Conv: channels into the first transposed-conv block; MLP: first
    /// decoder hidden width.
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default)]
    pub latent_dim: Option<usize>,
}

fn default_classifier_arch() -> ClassifierArch {
    ClassifierArch::Cnn
}

fn default_backbone() -> GenBackbone {
    GenBackbone::Conv
}

fn default_width() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub replay_n: Option<usize>,
    #[serde(default)]
    pub fisher_samples: Option<usize>,
}

fn default_batch() -> usize {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalGranularity {
    Task,
    Epoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenMetricWhen {
    Off,
    Final,
    Task,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSpec {
    /// Whole-stream accuracy curve granularity.
    #[serde(default = "default_granularity")]
    pub granularity: EvalGranularity,
    #[serde(default = "default_gen_when")]
    pub fid: GenMetricWhen,
    #[serde(default = "default_gen_when")]
    pub fitting_capacity: GenMetricWhen,
    #[serde(default = "default_fic_train")]
    pub fic_train_size: usize,
    #[serde(default = "default_fic_epochs")]
    pub fic_epochs: usize,
    /// Epochs used to train the pinned expert (FID extractor / annotator).
    #[serde(default = "default_expert_epochs")]
    pub expert_epochs: usize,
    /// Samples drawn per side for FID.
    #[serde(default = "default_fid_samples")]
    pub fid_samples: usize,
}

fn default_granularity() -> EvalGranularity {
    EvalGranularity::Epoch
}

fn default_gen_when() -> GenMetricWhen {
    GenMetricWhen::Off
}

fn default_fic_train() -> usize {
    55_000
}

fn default_fic_epochs() -> usize {
    25
}

fn default_expert_epochs() -> usize {
    10
}

fn default_fid_samples() -> usize {
    5_000
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self {
            granularity: default_granularity(),
            fid: GenMetricWhen::Off,
            fitting_capacity: GenMetricWhen::Off,
            fic_train_size: default_fic_train(),
            fic_epochs: default_fic_epochs(),
            expert_epochs: default_expert_epochs(),
            fid_samples: default_fid_samples(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub corpus: Corpus,
    pub scenario: ScenarioSpec,
    pub strategy: StrategyKind,
    pub model: ModelSpec,
    pub training: TrainingSpec,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.training.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.training.batch_size < 2 {
            return Err(Error::InvalidConfig("batch size must be >= 2".into()));
        }
        if self.scenario.n_tasks == 0 {
            return Err(Error::InvalidConfig("n_tasks must be >= 1".into()));
        }
        if self.scenario.kind.is_fellowship() && self.scenario.n_tasks != 3 {
            return Err(Error::InvalidConfig("fellowship streams have exactly 3 tasks".into()));
        }
        match self.model.kind {
            ModelKind::Classifier => {}
            ModelKind::Generator | ModelKind::Pair => {
                if self.model.family.is_none() {
                    return Err(Error::InvalidConfig("generator runs need model.family".into()));
                }
            }
        }
        match self.strategy {
            StrategyKind::ConditionalReplay { .. } => {
                let fam = self.model.family.unwrap_or(GenFamily::Gan);
                if !fam.is_conditional() {
                    return Err(Error::InvalidConfig(
                        "conditional replay needs a conditional family (cgan/cvae)".into(),
                    ));
                }
            }
            StrategyKind::MarginalReplay { .. } | StrategyKind::GenerativeReplay
                if self.model.kind == ModelKind::Classifier =>
            {
                return Err(Error::InvalidConfig(
                    "generative replay strategies need model.kind = generator or pair".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// Head size of the output layer for this configuration.
    pub fn head_size(&self) -> usize {
        match self.scenario.kind {
            ScenarioSpecKind::FellowshipDisjoint | ScenarioSpecKind::FellowshipLabeled => 30,
            _ => 10,
        }
    }

    /// Pixel normalization consumed by the primary model of the run.
    pub fn normalization(&self) -> Normalization {
        match self.model.kind {
            ModelKind::Classifier => Normalization::UnitInterval,
            _ => self
                .model
                .family
                .map(|f| f.normalization())
                .unwrap_or(Normalization::UnitInterval),
        }
    }

    /// Digest of the canonicalized (JSON-serialized) config content.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        hex_prefix(&digest, 12)
    }
}

fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes.iter().take(n).map(|b| format!("{b:02x}")).collect()
}
