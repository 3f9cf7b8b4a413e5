use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, TrainMode};
use super::data::{batch_sizes, SampleSet};
use super::HarnessError;
use crate::augment::augment;
use crate::dataset::{FoldPlan, Manifest};
use crate::model::{load_checkpoint, Adam, CnnSpec, MicroCnn, Mode, ModelError};
use crate::rng::{derive_seed, SeededStream};

const STREAM_INIT: u64 = 0x4e17;
const STREAM_ORDER: u64 = 0x0de5;
const STREAM_AUGMENT: u64 = 0xa49;
const STREAM_DROPOUT: u64 = 0xd50;

/// Dropout applied after the hidden layer when training from scratch.
pub const SCRATCH_DROPOUT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_loss: f64,
    pub validation_accuracy: f64,
    pub train_samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
    pub stop_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainRecord {
    /// Epoch (1-based) with the lowest validation loss; earliest on ties.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<&EpochRecord> = None;
        for e in &self.epochs {
            if best.is_none_or(|b| e.validation_loss < b.validation_loss) {
                best = Some(e);
            }
        }
        best.map(|e| e.epoch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub loss: f64,
    /// Fraction in `[0, 1]`.
    pub accuracy: f64,
    pub samples: usize,
    pub batches: usize,
}

/// True iff none of the last `patience` values strictly improves on the
/// best value before them.
pub fn early_stop(history: &[f64], patience: usize) -> bool {
    if history.len() <= patience {
        return false;
    }
    let split = history.len() - patience;
    let best = history[..split].iter().copied().fold(f64::INFINITY, f64::min);
    history[split..].iter().all(|&v| v >= best)
}

/// Run up to `max_epochs` calls of `epoch`, stopping early per
/// [`early_stop`] on the recorded validation losses.
pub fn run_epochs(
    max_epochs: usize,
    patience: usize,
    mut epoch: impl FnMut(usize) -> Result<EpochRecord, HarnessError>,
) -> Result<TrainRecord, HarnessError> {
    let mut epochs = Vec::new();
    let mut history = Vec::new();
    for e in 1..=max_epochs {
        let rec = epoch(e)?;
        history.push(rec.validation_loss);
        epochs.push(rec);
        if early_stop(&history, patience) {
            return Ok(TrainRecord {
                epochs,
                stop_epoch: e,
                stop_reason: StopReason::EarlyStop,
            });
        }
    }
    Ok(TrainRecord {
        stop_epoch: epochs.len(),
        epochs,
        stop_reason: StopReason::Completed,
    })
}

pub fn model_spec(config: &RunConfig) -> CnnSpec {
    let dropout = match config.mode {
        TrainMode::Scratch => Some(SCRATCH_DROPOUT),
        TrainMode::Transfer => None,
    };
    CnnSpec {
        input_size: config.input_size,
        ..CnnSpec::micro()
    }
    .with_dropout(dropout)
}

/// Fresh model for a run; in transfer mode the trunk comes from the
/// configured checkpoint.
pub fn prepare_model(config: &RunConfig, stream: u64) -> Result<MicroCnn<f32>, HarnessError> {
    let spec = model_spec(config);
    let mut model = MicroCnn::new(spec, derive_seed(config.seed, &[STREAM_INIT, stream]))?;
    if config.mode == TrainMode::Transfer {
        let path = config
            .pretrained
            .as_deref()
            .ok_or_else(|| HarnessError::InvalidConfig("transfer mode needs a pretrained checkpoint".into()))?;
        let source: MicroCnn<f32> = load_checkpoint(path)?;
        let same_trunk = source.spec.in_channels == model.spec.in_channels
            && source.spec.conv_channels == model.spec.conv_channels;
        if !same_trunk {
            return Err(ModelError::ShapeMismatch(format!("{}: trunk does not match", path.display())).into());
        }
        model.params.convs = source.params.convs;
    }
    Ok(model)
}

/// Mean cross-entropy and top-1 accuracy over `set`, in order, batched.
pub fn evaluate(model: &MicroCnn<f32>, set: &SampleSet, batch: usize) -> Result<EvalResult, HarnessError> {
    if set.is_empty() {
        return Err(HarnessError::DataUnavailable("empty evaluation set".into()));
    }
    let indices: Vec<usize> = (0..set.len()).collect();
    evaluate_indices(model, set, &indices, batch)
}

fn evaluate_indices(
    model: &MicroCnn<f32>,
    set: &SampleSet,
    indices: &[usize],
    batch: usize,
) -> Result<EvalResult, HarnessError> {
    let mut loss = 0.0;
    let mut correct = 0;
    let mut start = 0;
    let sizes = batch_sizes(indices.len(), batch);
    for &size in &sizes {
        let chunk = &indices[start..start + size];
        start += size;
        let (x, y) = set.batch::<f32>(chunk);
        let cache = model.forward_cached(&x, Mode::Eval)?;
        loss += MicroCnn::loss(&cache, &y) * size as f64;
        correct += count_correct(&cache.probs, &y);
    }
    Ok(EvalResult {
        loss: loss / indices.len() as f64,
        accuracy: correct as f64 / indices.len() as f64,
        samples: indices.len(),
        batches: sizes.len(),
    })
}

fn count_correct(probs: &ndarray::Array2<f32>, targets: &[usize]) -> usize {
    probs
        .outer_iter()
        .zip(targets)
        .filter(|(row, &t)| crate::model::loss::argmax(row.as_slice().expect("row")) == t)
        .count()
}

/// Endless reshuffled passes over the training set.
struct BatchCycle {
    seed: u64,
    n: usize,
    order: Vec<usize>,
    cursor: usize,
    pass: u64,
}

impl BatchCycle {
    fn new(seed: u64, n: usize) -> Self {
        let mut cycle = Self {
            seed,
            n,
            order: Vec::new(),
            cursor: 0,
            pass: 0,
        };
        cycle.reshuffle();
        cycle
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        SeededStream::substream(self.seed, &[STREAM_ORDER, self.pass]).shuffle(&mut self.order);
        self.pass += 1;
        self.cursor = 0;
    }

    fn take(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.n {
                self.reshuffle();
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Train under `config`: each epoch runs exactly `steps_per_epoch` augmented
/// batches, then `validation_steps` plain validation batches (wrapping the
/// validation set if it is shorter). Transfer mode freezes the trunk.
pub fn train(
    config: &RunConfig,
    model: &mut MicroCnn<f32>,
    train_set: &SampleSet,
    validation_set: &SampleSet,
) -> Result<TrainRecord, HarnessError> {
    config.validate()?;
    if train_set.is_empty() || validation_set.is_empty() {
        return Err(HarnessError::DataUnavailable("empty train or validation set".into()));
    }
    let train_trunk = config.mode == TrainMode::Scratch;
    let frozen = if train_trunk { 0 } else { model.params.trunk_tensors() };
    let mut optimizer = Adam::new(&model.params, config.learning_rate);
    let mut cycle = BatchCycle::new(config.seed, train_set.len());
    let val_indices: Vec<usize> = (0..config.validation_steps * config.validation_batch)
        .map(|i| i % validation_set.len())
        .collect();

    run_epochs(config.epochs, config.early_stop_patience, |epoch| {
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut seen = 0;
        for step in 0..config.steps_per_epoch {
            let indices = cycle.take(config.train_batch);
            let images: Vec<_> = indices
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let mut s = SeededStream::substream(config.seed, &[STREAM_AUGMENT, epoch as u64, step as u64, k as u64]);
                    augment(&train_set.images[i], &config.augment, &mut s)
                })
                .collect();
            let refs: Vec<_> = images.iter().collect();
            let x = crate::model::batch_from_images::<f32>(&refs);
            let y: Vec<usize> = indices.iter().map(|&i| train_set.labels[i]).collect();
            let mut dropout = SeededStream::substream(config.seed, &[STREAM_DROPOUT, epoch as u64, step as u64]);
            let cache = model.forward_cached(&x, Mode::Train(&mut dropout))?;
            loss_sum += MicroCnn::loss(&cache, &y) * y.len() as f64;
            correct += count_correct(&cache.probs, &y);
            seen += y.len();
            let grads = model.backward(&cache, &y, train_trunk)?;
            optimizer.update(&mut model.params, &grads, frozen)?;
        }
        let val = evaluate_indices(model, validation_set, &val_indices, config.validation_batch)?;
        Ok(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            validation_loss: val.loss,
            validation_accuracy: val.accuracy,
            train_samples: seen,
        })
    })
}

/// Outcome of one fold of a native k-fold run.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldRun {
    /// 0-based fold index.
    pub fold: usize,
    pub test: EvalResult,
    pub record: TrainRecord,
}

fn subset(all: &SampleSet, index: &HashMap<&str, usize>, ids: &[String]) -> SampleSet {
    let picks: Vec<usize> = ids.iter().map(|id| index[id.as_str()]).collect();
    SampleSet::from_parts(
        ids.to_vec(),
        picks.iter().map(|&i| all.images[i].clone()).collect(),
        picks.iter().map(|&i| all.labels[i]).collect(),
    )
}

/// Train and test one fresh model per fold of `plan`.
pub fn run_kfold(
    config: &RunConfig,
    plan: &FoldPlan,
    manifest: &Manifest,
    patch_dir: &Path,
    mut on_fold: impl FnMut(&FoldRun),
) -> Result<Vec<FoldRun>, HarnessError> {
    let all = SampleSet::load(manifest, &plan.population, patch_dir, config.input_size)?;
    let index: HashMap<&str, usize> = all.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut runs = Vec::with_capacity(plan.k);
    for fold in &plan.folds {
        let train_set = subset(&all, &index, &fold.train);
        let val_set = subset(&all, &index, &fold.validation);
        let test_set = subset(&all, &index, &fold.test);
        let mut fold_config = config.clone();
        fold_config.seed = derive_seed(config.seed, &[fold.index as u64]);
        let mut model = prepare_model(&fold_config, fold.index as u64)?;
        let record = train(&fold_config, &mut model, &train_set, &val_set)?;
        let test = evaluate(&model, &test_set, config.test_batch)?;
        let run = FoldRun {
            fold: fold.index,
            test,
            record,
        };
        on_fold(&run);
        runs.push(run);
    }
    Ok(runs)
}
