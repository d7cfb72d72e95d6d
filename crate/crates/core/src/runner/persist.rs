//! Model <-> checkpoint-container adapters.

use candle_core::Device;
use serde_json::json;

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::models::checkpoint::{Checkpoint, CheckpointHeader, TensorEntry, FORMAT_VERSION};
use crate::models::classifier::{Classifier, ClassifierArch};
use crate::models::{GenArch, GeneratorModel};
use crate::nn::TensorRng;

pub fn classifier_to_checkpoint(
    clf: &Classifier,
    normalization: Option<Normalization>,
) -> Result<(CheckpointHeader, Vec<(String, candle_core::Tensor)>)> {
    let mut tensors: Vec<(String, candle_core::Tensor)> = clf
        .store()
        .names()
        .into_iter()
        .zip(clf.store().snapshot()?)
        .collect();
    if let Classifier::Cnn(cnn) = clf {
        if let Some((mean, var)) = cnn.bn_state() {
            tensors.push(("bn.running_mean".into(), mean));
            tensors.push(("bn.running_var".into(), var));
        }
    }
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        kind: "classifier".into(),
        arch: json!({
            "arch": clf.arch(),
            "n_classes": clf.n_classes(),
        }),
        normalization,
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry { name: n.clone(), shape: t.dims().to_vec() })
            .collect(),
    };
    Ok((header, tensors))
}

pub fn classifier_from_checkpoint(ck: &Checkpoint, dev: &Device) -> Result<Classifier> {
    if ck.header.kind != "classifier" {
        return Err(Error::MalformedFile(format!(
            "expected a classifier checkpoint, found {}",
            ck.header.kind
        )));
    }
    let arch: ClassifierArch = serde_json::from_value(ck.header.arch["arch"].clone())?;
    let n_classes: usize = serde_json::from_value(ck.header.arch["n_classes"].clone())?;
    let mut rng = TensorRng::new(0);
    let mut clf = Classifier::new(arch, n_classes, &mut rng, dev)?;
    let values: Vec<candle_core::Tensor> = clf
        .store()
        .names()
        .iter()
        .map(|name| ck.tensor(name, dev))
        .collect::<Result<_>>()?;
    clf.store().load(&values)?;
    if let Classifier::Cnn(cnn) = &mut clf {
        if let (Ok(mean), Ok(var)) = (ck.tensor("bn.running_mean", dev), ck.tensor("bn.running_var", dev)) {
            cnn.set_bn_state(Some((mean, var)));
        }
    }
    Ok(clf)
}

pub fn generator_to_checkpoint(
    gen: &GeneratorModel,
) -> Result<(CheckpointHeader, Vec<(String, candle_core::Tensor)>)> {
    let mut tensors = Vec::new();
    for (_, store) in gen.stores() {
        for (name, value) in store.names().into_iter().zip(store.snapshot()?) {
            tensors.push((name, value));
        }
    }
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        kind: "generator".into(),
        arch: serde_json::to_value(gen.arch)?,
        normalization: Some(gen.family().normalization()),
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry { name: n.clone(), shape: t.dims().to_vec() })
            .collect(),
    };
    Ok((header, tensors))
}

pub fn generator_from_checkpoint(ck: &Checkpoint, dev: &Device) -> Result<GeneratorModel> {
    if ck.header.kind != "generator" {
        return Err(Error::MalformedFile(format!(
            "expected a generator checkpoint, found {}",
            ck.header.kind
        )));
    }
    let arch: GenArch = serde_json::from_value(ck.header.arch.clone())?;
    let mut rng = TensorRng::new(0);
    let gen = GeneratorModel::new(arch, &mut rng, dev)?;
    for (_, store) in gen.stores() {
        let values: Vec<candle_core::Tensor> = store
            .names()
            .iter()
            .map(|name| ck.tensor(name, dev))
            .collect::<Result<_>>()?;
        store.load(&values)?;
    }
    Ok(gen)
}
