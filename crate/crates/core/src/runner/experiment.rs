//! One (config, seed) run: build the continuum, train task by task under
//! the strategy, fill the accuracy matrix / generative-metric trajectories,
//! and persist the report atomically.

use std::path::Path;

use candle_core::Device;

use crate::data::{self, Normalization, SampleSet};
use crate::error::{Error, Result};
use crate::metrics::eval::{accuracy, features_of_samples, features_of_synth};
use crate::metrics::fic::{fitting_capacity, generate_labeled_set, train_classifier, Annotator, FicConfig, OptSpec};
use crate::metrics::matrix::{AccuracyMatrix, ResourceLedger};
use crate::metrics::{fid, GenEvalReport};
use crate::models::batch::{SynthSet, TrainPool};
use crate::models::classifier::{Classifier, ClassifierArch};
use crate::models::{GenArch, GeneratorModel};
use crate::nn::TensorRng;
use crate::scenarios::{self, Continuum, Regime};
use crate::strategies::{
    train_task_hooked, StrategyKind, StrategyState, TaskModels, TrainConfig,
};

use super::config::{EvalGranularity, ExperimentConfig, GenMetricWhen, ModelKind, ScenarioSpecKind};
use super::persist::{classifier_from_checkpoint, classifier_to_checkpoint, generator_to_checkpoint};
use super::report::{CurvePoint, RunReport, RunStatus, StreamMetrics, REPORT_VERSION};

/// Builds the task stream described by the config.
pub fn build_continuum(cfg: &ExperimentConfig, data_root: &Path) -> Result<Continuum> {
    let norm = cfg.normalization();
    match cfg.scenario.kind {
        ScenarioSpecKind::Disjoint => {
            let split = data::load_dataset(data_root, cfg.corpus, norm)?;
            scenarios::build_disjoint(&split, cfg.scenario.n_tasks)
        }
        ScenarioSpecKind::Rotation => {
            let split = data::load_dataset(data_root, cfg.corpus, norm)?;
            scenarios::build_rotations(&split, cfg.scenario.n_tasks, cfg.scenario.seed)
        }
        ScenarioSpecKind::Permutation => {
            let split = data::load_dataset(data_root, cfg.corpus, norm)?;
            scenarios::build_permutations(&split, cfg.scenario.n_tasks, cfg.scenario.seed)
        }
        kind => scenarios::build_fellowship(data_root, kind.fellowship_setting().unwrap(), norm),
    }
}

/// The pinned expert (regularized CNN trained on the full i.i.d. benchmark):
/// FID feature extractor and annotator for unconditional fitting capacity.
/// Trained once per corpus and cached as a checkpoint under `out_root`.
pub fn ensure_expert(
    data_root: &Path,
    out_root: &Path,
    corpus: data::Corpus,
    epochs: usize,
    dev: &Device,
) -> Result<(Classifier, String)> {
    let dir = out_root.join("experts");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{corpus}-e{epochs}.clck"));
    if path.exists() {
        let ck = crate::models::checkpoint::load(&path)?;
        let clf = classifier_from_checkpoint(&ck, dev)?;
        let digest = format!("{:016x}", clf.store().digest()?);
        return Ok((clf, digest));
    }
    let split = data::load_dataset(data_root, corpus, Normalization::UnitInterval)?;
    let pool = TrainPool::new(&split.train, None);
    let outcome = train_classifier(
        ClassifierArch::CnnRegularized,
        data::NUM_CLASSES,
        &pool,
        Some(&split.val),
        OptSpec::Adam { lr: 0.01, beta1: 0.5, beta2: 0.999 },
        epochs,
        64,
        0xE19E57,
        dev,
    )?;
    let clf = outcome.classifier;
    let (header, tensors) = classifier_to_checkpoint(&clf, Some(Normalization::UnitInterval))?;
    crate::models::checkpoint::save(&path, &header, &tensors)?;
    let digest = format!("{:016x}", clf.store().digest()?);
    Ok((clf, digest))
}

fn class_mask(continuum: &Continuum, task: usize) -> Result<Option<Vec<u16>>> {
    Ok(match continuum.regime {
        Regime::PermanentLabels => Some(continuum.task_meta(task)?.head_classes()),
        Regime::LearningLabels => None,
    })
}

/// Accuracy of `clf` on every task's test split (row `i` of R).
fn eval_row(clf: &mut Classifier, continuum: &Continuum, dev: &Device) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(continuum.n_tasks());
    for j in 0..continuum.n_tasks() {
        let mask = class_mask(continuum, j)?;
        row.push(accuracy(clf, continuum.test_data(j)?, dev, mask.as_deref())?);
    }
    Ok(row)
}

fn eval_row_val(clf: &mut Classifier, continuum: &Continuum, dev: &Device) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(continuum.n_tasks());
    for j in 0..continuum.n_tasks() {
        let mask = class_mask(continuum, j)?;
        row.push(accuracy(clf, continuum.val_data(j).unwrap_or(&SampleSet::default()), dev, mask.as_deref())?);
    }
    Ok(row)
}

/// Per-head-class accuracy over the union of all test sets.
fn per_class_row(clf: &mut Classifier, continuum: &Continuum, head: usize, dev: &Device) -> Result<Vec<f64>> {
    let mut correct = vec![0usize; head];
    let mut total = vec![0usize; head];
    for j in 0..continuum.n_tasks() {
        let set = continuum.test_data(j)?;
        let mask = class_mask(continuum, j)?;
        // reuse batched prediction through accuracy's machinery, but per class
        let preds = predict_all(clf, set, dev, mask.as_deref())?;
        for (i, &p) in preds.iter().enumerate() {
            let c = set.labels[i] as usize;
            if c < head {
                total[c] += 1;
                if p == set.labels[i] {
                    correct[c] += 1;
                }
            }
        }
    }
    Ok((0..head)
        .map(|c| if total[c] == 0 { 0.0 } else { correct[c] as f64 / total[c] as f64 })
        .collect())
}

fn predict_all(clf: &mut Classifier, set: &SampleSet, dev: &Device, mask: Option<&[u16]>) -> Result<Vec<u16>> {
    use crate::models::batch::samples_to_tensor;
    let mut out = Vec::with_capacity(set.len());
    for start in (0..set.len()).step_by(crate::metrics::eval::EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + crate::metrics::eval::EVAL_BATCH).min(set.len())).collect();
        let x = samples_to_tensor(set, &idx, Normalization::UnitInterval, dev)?;
        match mask {
            None => out.extend(clf.predict(&x)?),
            Some(classes) => {
                let mut rng = TensorRng::new(0);
                let lp = clf.forward(&x, false, &mut rng)?;
                let cols: Vec<u32> = classes.iter().map(|&c| c as u32).collect();
                let cols = candle_core::Tensor::from_vec(cols, classes.len(), dev)?;
                let sub = lp.index_select(&cols, 1)?;
                let ids = sub.argmax(1)?.to_dtype(candle_core::DType::U32)?.to_vec1::<u32>()?;
                out.extend(ids.into_iter().map(|v| classes[v as usize]));
            }
        }
    }
    Ok(out)
}

fn importance_bytes(state: &StrategyState) -> usize {
    state
        .importance
        .as_ref()
        .map(|imp| {
            let anchor: usize = imp.anchors.iter().flatten().map(|t| t.elem_count() * 4).sum();
            let weights: usize = imp.weights.iter().map(|t| t.elem_count() * 4).sum();
            let sigma: usize = imp.per_task_sigma.iter().flatten().map(|t| t.elem_count() * 4).sum();
            anchor + weights + sigma
        })
        .unwrap_or(0)
}

struct GenEvalCtx {
    expert: Classifier,
    expert_digest: String,
    extractor_features_cache: Option<(usize, nalgebra::DMatrix<f64>)>,
}

#[allow(clippy::too_many_arguments)]
fn generative_eval(
    ctx: &mut GenEvalCtx,
    cfg: &ExperimentConfig,
    gen: &GeneratorModel,
    continuum: &Continuum,
    t: usize,
    seed: u64,
    dev: &Device,
) -> Result<GenEvalReport> {
    let last = t + 1 == continuum.n_tasks();
    let want = |when: GenMetricWhen| match when {
        GenMetricWhen::Off => false,
        GenMetricWhen::Final => last,
        GenMetricWhen::Task => true,
    };
    let seen: Vec<u16> = (0..=t)
        .flat_map(|i| continuum.task_meta(i).map(|task| task.head_classes()).unwrap_or_default())
        .collect();
    let mut report = GenEvalReport {
        task: t,
        annotator: if gen.family().is_conditional() { "conditional" } else { "expert" }.to_string(),
        ..Default::default()
    };

    if want(cfg.evaluation.fid) {
        let real = continuum.cumulative_test_set(t)?;
        let n = cfg.evaluation.fid_samples.min(real.len());
        let idx: Vec<usize> = (0..n).collect();
        let real_subset = real.subset(&idx);
        let real_feats = match &ctx.extractor_features_cache {
            Some((cached_t, f)) if *cached_t == t => f.clone(),
            _ => {
                let f = match &mut ctx.expert {
                    Classifier::Cnn(cnn) => features_of_samples(cnn, &real_subset, dev)?,
                    _ => unreachable!("expert is a CNN"),
                };
                ctx.extractor_features_cache = Some((t, f.clone()));
                f
            }
        };
        let mut synth = SynthSet::default();
        let norm = gen.family().normalization();
        let mut produced = 0usize;
        let mut chunk = 0u64;
        while produced < n {
            let b = 500.min(n - produced);
            let images = if gen.family().is_conditional() {
                gen.sample_balanced(&seen, b, seed ^ 0xF1D ^ chunk)?.0
            } else {
                gen.sample(b, seed ^ 0xF1D ^ chunk)?
            };
            synth.push_tensor(&images, &vec![0u16; b], norm)?;
            produced += b;
            chunk += 1;
        }
        let gen_feats = match &mut ctx.expert {
            Classifier::Cnn(cnn) => features_of_synth(cnn, &synth, dev)?,
            _ => unreachable!(),
        };
        report.fid = Some(fid(&real_feats, &gen_feats)?);
    }

    if want(cfg.evaluation.fitting_capacity) {
        let real_test = continuum.cumulative_test_set(t)?;
        let fic_cfg = FicConfig {
            train_size: cfg.evaluation.fic_train_size,
            epochs: cfg.evaluation.fic_epochs,
            ..Default::default()
        };
        let mut annotator = if gen.family().is_conditional() {
            Annotator::Conditional
        } else {
            Annotator::Expert(&mut ctx.expert)
        };
        let value = fitting_capacity(
            gen,
            &mut annotator,
            &seen,
            &real_test,
            cfg.head_size(),
            &fic_cfg,
            seed ^ 0xF1C0 ^ t as u64,
            dev,
        )?;
        report.fitting_capacity = Some(value);
    }
    Ok(report)
}

/// Runs one (config, seed) experiment. Rerunning a finished pair is a no-op
/// returning the persisted report unless `force` is set.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    seed: u64,
    data_root: &Path,
    out_root: &Path,
    force: bool,
) -> Result<RunReport> {
    cfg.validate()?;
    let hash = cfg.hash();
    let dir = RunReport::run_dir(out_root, &hash, seed);
    let report_path = RunReport::path_in(&dir);
    if report_path.exists() && !force {
        return RunReport::load(&report_path);
    }
    let dev = Device::Cpu;

    let mut continuum = build_continuum(cfg, data_root)?;
    let n_tasks = continuum.n_tasks();
    let head = cfg.head_size();
    let scenario_desc = continuum.descriptor();

    let mut rng = TensorRng::new(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1));
    let needs_generator = !matches!(cfg.model.kind, ModelKind::Classifier);
    let needs_classifier = !matches!(cfg.model.kind, ModelKind::Generator);

    let mut classifier = if needs_classifier {
        Some(Classifier::new(cfg.model.classifier, head, &mut rng, &dev)?)
    } else {
        None
    };
    let make_generator = |rng: &mut TensorRng| -> Result<GeneratorModel> {
        let family = cfg.model.family.expect("validated");
        let mut arch = GenArch::new(family, cfg.model.backbone, cfg.model.width, head);
        if let Some(ld) = cfg.model.latent_dim {
            arch.latent_dim = ld;
        }
        GeneratorModel::new(arch, rng, &dev)
    };
    let mut generator = if needs_generator { Some(make_generator(&mut rng)?) } else { None };

    let mut state = StrategyState::new(cfg.strategy)?;
    if let Some(clf) = &classifier {
        state.seed_si_anchor(clf.store().snapshot()?);
    } else if let Some(gen) = &generator {
        let anchor: Vec<_> = gen
            .penalized_vars()
            .iter()
            .map(|v| v.as_tensor().copy())
            .collect::<std::result::Result<_, _>>()?;
        state.seed_si_anchor(anchor);
    }

    // generative metrics need the pinned expert
    let wants_gen_eval = needs_generator
        && (cfg.evaluation.fid != GenMetricWhen::Off
            || cfg.evaluation.fitting_capacity != GenMetricWhen::Off);
    let mut gen_ctx = if wants_gen_eval {
        let (expert, digest) =
            ensure_expert(data_root, out_root, cfg.corpus, cfg.evaluation.expert_epochs, &dev)?;
        Some(GenEvalCtx { expert, expert_digest: digest, extractor_features_cache: None })
    } else {
        None
    };

    let train_cfg = TrainConfig {
        epochs: cfg.training.epochs,
        batch_size: cfg.training.batch_size,
        optimizer: cfg.training.optimizer,
        replay_n: cfg.training.replay_n,
        fisher_samples: cfg.training.fisher_samples,
    };

    let mut r_rows: Vec<Vec<f64>> = Vec::new();
    let mut r_val_rows: Vec<Vec<f64>> = Vec::new();
    let mut per_class: Vec<Vec<f64>> = Vec::new();
    let mut whole_curve: Vec<CurvePoint> = Vec::new();
    let mut first_curve: Vec<CurvePoint> = Vec::new();
    let mut task_metrics = Vec::new();
    let mut gen_eval = Vec::new();
    let mut ledger = ResourceLedger { epsilon: cfg.training.epochs as f64, ..Default::default() };
    let mut wall = Vec::new();
    let mut status = RunStatus::Completed;
    let mut failure = None;

    'stream: for t in 0..n_tasks {
        if t > 0 {
            continuum.advance()?;
        }
        // upperbound-model: a fresh model per task
        if matches!(cfg.strategy, StrategyKind::UpperboundModel) {
            if let Some(clf) = &mut classifier {
                *clf = Classifier::new(cfg.model.classifier, head, &mut rng, &dev)?;
            }
            if let Some(gen) = &mut generator {
                *gen = make_generator(&mut rng)?;
            }
        }

        let cumulative_test = continuum.cumulative_test_set(t)?;
        let first_test = continuum.test_data(0)?.clone();
        let epoch_curves: std::cell::RefCell<(Vec<CurvePoint>, Vec<CurvePoint>)> =
            std::cell::RefCell::new((Vec::new(), Vec::new()));
        let record_epochs = cfg.evaluation.granularity == EvalGranularity::Epoch && needs_classifier;
        let mut hook = |clf: &mut Classifier, epoch: usize| -> Result<()> {
            let acc = accuracy(clf, &cumulative_test, &dev, None)?;
            let first = accuracy(clf, &first_test, &dev, None)?;
            let mut curves = epoch_curves.borrow_mut();
            curves.0.push(CurvePoint { task: t, epoch, accuracy: acc });
            curves.1.push(CurvePoint { task: t, epoch, accuracy: first });
            Ok(())
        };

        let outcome = {
            let mut models = match (&mut classifier, &mut generator) {
                (Some(clf), None) => TaskModels::Classifier(clf),
                (None, Some(gen)) => TaskModels::Generator(gen),
                (Some(clf), Some(gen)) => TaskModels::Pair { classifier: clf, generator: gen },
                (None, None) => return Err(Error::InvalidConfig("no model to train".into())),
            };
            train_task_hooked(
                &mut state,
                &mut models,
                &continuum,
                t,
                &train_cfg,
                seed,
                &dev,
                record_epochs.then_some(&mut hook as _),
            )
        };
        let metrics = match outcome {
            Ok(m) => m,
            Err(Error::NumericalDivergence(msg)) => {
                status = RunStatus::Diverged;
                failure = Some(format!("task {t}: {msg}"));
                break 'stream;
            }
            Err(e) => return Err(e),
        };
        let curves = epoch_curves.into_inner();
        whole_curve.extend(curves.0);
        first_curve.extend(curves.1);

        // IMM evaluates the merged model, then training resumes from the
        // raw end-of-task parameters.
        let imm_raw = if matches!(cfg.strategy, StrategyKind::ImmMean | StrategyKind::ImmMode) {
            let clf = classifier.as_mut().expect("IMM runs classifiers");
            let raw = clf.store().snapshot()?;
            if let Some(imp) = &state.importance {
                if imp.anchors.len() >= 2 {
                    let merged = imp.imm_merge()?;
                    clf.store().load(&merged)?;
                }
            }
            Some(raw)
        } else {
            None
        };

        if let Some(clf) = &mut classifier {
            let row = eval_row(clf, &continuum, &dev)?;
            let row_val = eval_row_val(clf, &continuum, &dev)?;
            per_class.push(per_class_row(clf, &continuum, head, &dev)?);
            if cfg.evaluation.granularity == EvalGranularity::Task {
                whole_curve.push(CurvePoint {
                    task: t,
                    epoch: cfg.training.epochs - 1,
                    accuracy: accuracy(clf, &cumulative_test, &dev, None)?,
                });
                first_curve.push(CurvePoint {
                    task: t,
                    epoch: cfg.training.epochs - 1,
                    accuracy: row[0],
                });
            }
            r_rows.push(row);
            r_val_rows.push(row_val);
        }

        if let (Some(gen), Some(ctx)) = (&generator, &mut gen_ctx) {
            let report = generative_eval(ctx, cfg, gen, &continuum, t, seed, &dev)?;
            if report.fid.is_some() || report.fitting_capacity.is_some() {
                gen_eval.push(report);
            }
        }

        if let Some(raw) = imm_raw {
            classifier.as_mut().unwrap().store().load(&raw)?;
        }

        // resource ledger
        let model_params: usize = classifier.as_ref().map(|c| c.store().param_count()).unwrap_or(0)
            + generator.as_ref().map(|g| g.param_count()).unwrap_or(0);
        let model_copies = if matches!(cfg.strategy, StrategyKind::UpperboundModel) { t + 1 } else { 1 };
        let mul_adds: u64 = classifier.as_ref().map(|c| c.mul_adds_per_sample()).unwrap_or(0)
            + generator.as_ref().map(|g| g.mul_adds_per_sample()).unwrap_or(0);
        let task_len = continuum.task_meta(t)?.train.len();
        let effective = metrics.real_samples + metrics.replay_samples;
        ledger.model_mem.push((model_params * 4 * model_copies) as f64);
        ledger.data_mem.push((state.stored_data_bytes() + importance_bytes(&state)) as f64);
        ledger.ops_fwbw.push(3.0 * mul_adds as f64 * task_len as f64);
        ledger.ops_train.push(3.0 * mul_adds as f64 * effective as f64 * cfg.training.epochs as f64);
        wall.push(metrics.wall_seconds);
        task_metrics.push(metrics);
    }

    // final artifacts
    std::fs::create_dir_all(dir.join("checkpoints"))?;
    if let Some(clf) = &classifier {
        let (header, tensors) = classifier_to_checkpoint(clf, Some(Normalization::UnitInterval))?;
        crate::models::checkpoint::save(&dir.join("checkpoints/classifier.clck"), &header, &tensors)?;
    }
    if let Some(gen) = &generator {
        let (header, tensors) = generator_to_checkpoint(gen)?;
        crate::models::checkpoint::save(&dir.join("checkpoints/generator.clck"), &header, &tensors)?;
    }

    let r_complete = r_rows.len() == n_tasks;
    let stream_metrics = if r_complete && status == RunStatus::Completed && !r_rows.is_empty() {
        let m = AccuracyMatrix::from_rows(r_rows.clone())?;
        Some(StreamMetrics::from_matrix(&m, &ledger)?)
    } else {
        None
    };

    let report = RunReport {
        version: REPORT_VERSION,
        config_hash: hash,
        config: cfg.clone(),
        seed,
        status,
        scenario: scenario_desc,
        r_matrix: (!r_rows.is_empty()).then_some(r_rows),
        r_matrix_val: (!r_val_rows.is_empty()).then_some(r_val_rows),
        stream_metrics,
        whole_stream_curve: whole_curve,
        first_task_curve: first_curve,
        per_class_accuracy: (!per_class.is_empty()).then_some(per_class),
        task_metrics,
        gen_eval,
        ledger,
        wall_clock_per_task: wall,
        extractor_digest: gen_ctx.map(|c| c.expert_digest),
        failure,
    };
    report.save(&dir)?;
    Ok(report)
}

/// Real-data expert utilities shared by tests and the CLI: generate a
/// labeled sample set from a run's generator checkpoint.
pub fn sample_set_from_generator(
    gen: &GeneratorModel,
    classes: &[u16],
    n: usize,
    seed: u64,
) -> Result<SynthSet> {
    let mut annotator = Annotator::Conditional;
    if gen.family().is_conditional() {
        let cfg = FicConfig { train_size: n, ..Default::default() };
        generate_labeled_set(gen, &mut annotator, classes, &cfg, seed, gen.device())
    } else {
        let mut out = SynthSet::default();
        let images = gen.sample(n, seed)?;
        out.push_tensor(&images, &vec![0u16; n], gen.family().normalization())?;
        Ok(out)
    }
}
