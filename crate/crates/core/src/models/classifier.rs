//! Reference classifiers: the 5x5-kernel CNN (plain and regularized
//! variants) and the two-hidden-layer MLP.

use candle_core::{DType, Device, Tensor};
use candle_nn::ops::log_softmax;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{max_pool2x2, BatchNorm1d, Conv2d, Dropout, Linear, ParamStore, TensorRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CnnVariant {
    /// conv -> pool -> relu twice, then fc 320-50-K.
    Plain,
    /// Adds dropout(0.5) on conv2's input and batch-norm before fc1.
    Regularized,
}

/// LeNet-style CNN: conv1 1->10 (5x5), conv2 10->20 (5x5), both followed by
/// 2x2 max-pool and ReLU, then fc 320->50->n_classes with log-softmax.
pub struct ClassifierCnn {
    pub store: ParamStore,
    conv1: Conv2d,
    conv2: Conv2d,
    fc1: Linear,
    fc2: Linear,
    bn: Option<BatchNorm1d>,
    dropout: Option<Dropout>,
    pub variant: CnnVariant,
    pub n_classes: usize,
}

impl ClassifierCnn {
    pub fn new(n_classes: usize, variant: CnnVariant, rng: &mut TensorRng, dev: &Device, dtype: DType) -> Result<Self> {
        let mut store = ParamStore::new();
        let conv1 = Conv2d::new(&mut store, "conv1", 1, 10, 5, 1, 0, rng, dev, dtype)?;
        let conv2 = Conv2d::new(&mut store, "conv2", 10, 20, 5, 1, 0, rng, dev, dtype)?;
        let bn = match variant {
            CnnVariant::Regularized => Some(BatchNorm1d::new(&mut store, "bn", 320, dev, dtype)?),
            CnnVariant::Plain => None,
        };
        let fc1 = Linear::new(&mut store, "fc1", 320, 50, rng, dev, dtype)?;
        let fc2 = Linear::new(&mut store, "fc2", 50, n_classes, rng, dev, dtype)?;
        let dropout = match variant {
            CnnVariant::Regularized => Some(Dropout::new(0.5)),
            CnnVariant::Plain => None,
        };
        Ok(Self { store, conv1, conv2, fc1, fc2, bn, dropout, variant, n_classes })
    }

    fn trunk(&mut self, x: &Tensor, train: bool, rng: &mut TensorRng) -> Result<Tensor> {
        let h = max_pool2x2(&self.conv1.forward(x)?)?.relu()?;
        let h = match &self.dropout {
            Some(d) => d.forward(&h, train, rng)?,
            None => h,
        };
        let h = max_pool2x2(&self.conv2.forward(&h)?)?.relu()?;
        let h = h.flatten_from(1)?;
        let h = match &mut self.bn {
            Some(bn) => bn.forward(&h, train)?,
            None => h,
        };
        Ok(self.fc1.forward(&h)?.relu()?)
    }

    /// Log-probabilities `[B, n_classes]`.
    pub fn forward(&mut self, x: &Tensor, train: bool, rng: &mut TensorRng) -> Result<Tensor> {
        let feats = self.trunk(x, train, rng)?;
        Ok(log_softmax(&self.fc2.forward(&feats)?, 1)?)
    }

    /// Penultimate activations `[B, 50]` in eval mode; the FID feature space.
    pub fn features(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut unused = TensorRng::new(0);
        self.trunk(x, false, &mut unused)
    }

    /// Forward mul-adds per sample (conv + fc terms).
    pub fn mul_adds_per_sample(&self) -> u64 {
        let conv1 = 24 * 24 * 10 * 25;
        let conv2 = 8 * 8 * 20 * 10 * 25;
        let fc = 320 * 50 + 50 * self.n_classes as u64;
        conv1 + conv2 + fc
    }

    pub fn bn_state(&self) -> Option<(Tensor, Tensor)> {
        self.bn.as_ref().map(|b| b.running_state())
    }

    pub fn set_bn_state(&mut self, state: Option<(Tensor, Tensor)>) {
        if let (Some(bn), Some((m, v))) = (self.bn.as_mut(), state) {
            bn.set_running_state(m, v);
        }
    }
}

/// Fully-connected reference net: two hidden layers of 200 ReLU units.
pub struct MlpClassifier {
    pub store: ParamStore,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
    pub n_classes: usize,
}

impl MlpClassifier {
    pub fn new(n_classes: usize, rng: &mut TensorRng, dev: &Device, dtype: DType) -> Result<Self> {
        let mut store = ParamStore::new();
        let fc1 = Linear::new(&mut store, "fc1", 784, 200, rng, dev, dtype)?;
        let fc2 = Linear::new(&mut store, "fc2", 200, 200, rng, dev, dtype)?;
        let fc3 = Linear::new(&mut store, "fc3", 200, n_classes, rng, dev, dtype)?;
        Ok(Self { store, fc1, fc2, fc3, n_classes })
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let h = x.flatten_from(1)?;
        let h = self.fc1.forward(&h)?.relu()?;
        let h = self.fc2.forward(&h)?.relu()?;
        Ok(log_softmax(&self.fc3.forward(&h)?, 1)?)
    }

    pub fn mul_adds_per_sample(&self) -> u64 {
        (784 * 200 + 200 * 200 + 200 * self.n_classes) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierArch {
    Cnn,
    CnnRegularized,
    Mlp,
}

/// Dispatch wrapper so the strategy engine can drive either architecture.
pub enum Classifier {
    Cnn(ClassifierCnn),
    Mlp(MlpClassifier),
}

impl Classifier {
    pub fn new(arch: ClassifierArch, n_classes: usize, rng: &mut TensorRng, dev: &Device) -> Result<Self> {
        Ok(match arch {
            ClassifierArch::Cnn => Classifier::Cnn(ClassifierCnn::new(n_classes, CnnVariant::Plain, rng, dev, DType::F32)?),
            ClassifierArch::CnnRegularized => {
                Classifier::Cnn(ClassifierCnn::new(n_classes, CnnVariant::Regularized, rng, dev, DType::F32)?)
            }
            ClassifierArch::Mlp => Classifier::Mlp(MlpClassifier::new(n_classes, rng, dev, DType::F32)?),
        })
    }

    pub fn arch(&self) -> ClassifierArch {
        match self {
            Classifier::Cnn(c) if c.variant == CnnVariant::Plain => ClassifierArch::Cnn,
            Classifier::Cnn(_) => ClassifierArch::CnnRegularized,
            Classifier::Mlp(_) => ClassifierArch::Mlp,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Classifier::Cnn(c) => c.n_classes,
            Classifier::Mlp(m) => m.n_classes,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool, rng: &mut TensorRng) -> Result<Tensor> {
        match self {
            Classifier::Cnn(c) => c.forward(x, train, rng),
            Classifier::Mlp(m) => m.forward(x),
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            Classifier::Cnn(c) => &c.store,
            Classifier::Mlp(m) => &m.store,
        }
    }

    pub fn mul_adds_per_sample(&self) -> u64 {
        match self {
            Classifier::Cnn(c) => c.mul_adds_per_sample(),
            Classifier::Mlp(m) => m.mul_adds_per_sample(),
        }
    }

    /// Argmax class ids in eval mode.
    pub fn predict(&mut self, x: &Tensor) -> Result<Vec<u16>> {
        let mut unused = TensorRng::new(0);
        let lp = self.forward(x, false, &mut unused)?;
        let ids = lp.argmax(1)?.to_dtype(DType::U32)?.to_vec1::<u32>()?;
        Ok(ids.into_iter().map(|v| v as u16).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn cnn_output_shape_and_normalization() {
        let dev = Device::Cpu;
        let mut rng = TensorRng::new(1);
        let mut net = ClassifierCnn::new(10, CnnVariant::Plain, &mut rng, &dev, DType::F32).unwrap();
        let x = rng.uniform(0.0, 1.0, &[4, 1, 28, 28], &dev, DType::F32).unwrap();
        let lp = net.forward(&x, false, &mut rng).unwrap();
        assert_eq!(lp.dims(), &[4, 10]);
        let lse = crate::nn::ops::log_sum_exp_rows(&lp).unwrap();
        let vals: Vec<f32> = lse.to_vec1().unwrap();
        assert!(vals.iter().all(|v| v.abs() < 1e-5), "log-sum-exp rows: {vals:?}");
    }

    #[test]
    fn regularized_cnn_matches_shape() {
        let dev = Device::Cpu;
        let mut rng = TensorRng::new(2);
        let mut net = ClassifierCnn::new(10, CnnVariant::Regularized, &mut rng, &dev, DType::F32).unwrap();
        let x = rng.uniform(0.0, 1.0, &[2, 1, 28, 28], &dev, DType::F32).unwrap();
        let lp = net.forward(&x, true, &mut rng).unwrap();
        assert_eq!(lp.dims(), &[2, 10]);
    }

    #[test]
    fn features_are_nonnegative_and_deterministic() {
        let dev = Device::Cpu;
        let mut rng = TensorRng::new(3);
        let mut net = ClassifierCnn::new(10, CnnVariant::Plain, &mut rng, &dev, DType::F32).unwrap();
        let x = rng.uniform(0.0, 1.0, &[3, 1, 28, 28], &dev, DType::F32).unwrap();
        let f1 = net.features(&x).unwrap();
        let f2 = net.features(&x).unwrap();
        assert_eq!(f1.dims(), &[3, 50]);
        let a: Vec<f32> = f1.flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = f2.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn mlp_shapes() {
        let dev = Device::Cpu;
        let mut rng = TensorRng::new(4);
        let mut net = MlpClassifier::new(30, &mut rng, &dev, DType::F32).unwrap();
        let x = rng.uniform(0.0, 1.0, &[5, 1, 28, 28], &dev, DType::F32).unwrap();
        let lp = net.forward(&x).unwrap();
        assert_eq!(lp.dims(), &[5, 30]);
    }
}
