use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::cache::FeatureCache;
use super::loss::{loss_for_arity, LossKind};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, ModelConfig, ModelHandle, ParameterCounts};
use crate::pipeline::{AugmentConfig, BatchPlan, BatchStream};
use crate::task::{TaskName, TaskSpec};

pub const RUN_FILE_NAME: &str = "run.json";
pub const HISTORY_FILE_NAME: &str = "history.csv";

/// Images per backward pass when the backbone is trained too.
const FINE_TUNE_CHUNK: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for BatchSizes {
    fn default() -> Self {
        Self {
            train: 80,
            val: 28,
            test: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_sizes: BatchSizes,
    /// Training stops the first time validation accuracy exceeds this.
    pub early_stop_val_acc: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_epochs: 1500,
            batch_sizes: BatchSizes::default(),
            early_stop_val_acc: 0.98,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.early_stop_val_acc) {
            return Err(Error::Config(format!(
                "early_stop_val_acc must lie in [0, 1], got {}",
                self.early_stop_val_acc
            )));
        }
        let b = self.batch_sizes;
        if b.train == 0 || b.val == 0 || b.test == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_learning_rate(self.learning_rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunRecord {
    pub run_id: String,
    pub task: TaskName,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub augment_config: AugmentConfig,
    pub optimizer: AdamConfig,
    pub loss: LossKind,
    /// Absent when the model could not be built.
    pub parameter_counts: Option<ParameterCounts>,
    pub epoch_history: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub error: Option<String>,
    /// Epoch in which training failed, for `stop_reason = error`.
    pub failed_epoch: Option<usize>,
    /// Epoch whose weights were kept: highest validation accuracy, earliest
    /// on ties.
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub checkpoint_path: Option<PathBuf>,
    pub wall_clock_seconds: f64,
}

impl TrainRunRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// `epoch,train_loss,train_acc,val_loss,val_acc`
    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])?;
        for e in &self.epoch_history {
            w.serialize((e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Record for a run that failed before its first epoch, e.g. because
    /// the model could not be built.
    pub fn failed_before_training(
        run_id: impl Into<String>,
        task: TaskName,
        model_config: ModelConfig,
        train_config: TrainConfig,
        augment_config: AugmentConfig,
        error: &Error,
    ) -> Self {
        Self {
            run_id: run_id.into(),
            task,
            loss: loss_for_arity(model_config.n_classes).unwrap_or(LossKind::CategoricalCrossEntropy),
            optimizer: train_config.adam(),
            model_config,
            train_config,
            augment_config,
            parameter_counts: None,
            epoch_history: Vec::new(),
            stop_reason: StopReason::Error,
            error: Some(error.to_string()),
            failed_epoch: None,
            best_epoch: None,
            best_val_acc: None,
            checkpoint_path: None,
            wall_clock_seconds: 0.0,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.stop_reason != StopReason::Error
    }
}

/// Per-run settings that are not hyper-parameters.
#[derive(Debug, Default)]
pub struct TrainOptions<'a> {
    pub run_id: String,
    /// Where the best-validation weights are written at the end.
    pub checkpoint_path: Option<PathBuf>,
    /// Shared backbone feature cache; a private one is used when absent.
    pub feature_cache: Option<&'a FeatureCache>,
}

/// Accuracy and mean loss over a whole stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Trains `model` on `train`, validating on `val` after every epoch. On
/// return the model holds the best-validation weights.
pub fn train(
    model: &mut ModelHandle,
    task: &TaskSpec,
    train: &BatchStream,
    val: &BatchStream,
    cfg: &TrainConfig,
    opts: TrainOptions<'_>,
) -> Result<TrainRunRecord> {
    cfg.validate()?;
    let n_classes = model.config().n_classes;
    if task.n_classes != n_classes {
        return Err(Error::Config(format!(
            "task {} has {} classes but the model outputs {n_classes}",
            task.name, task.n_classes
        )));
    }
    let loss_kind = loss_for_arity(n_classes)?;
    let started = Instant::now();
    let private_cache = FeatureCache::new();
    let cache = opts.feature_cache.unwrap_or(&private_cache);

    let vars = model.trainable_vars();
    let mut adam = Adam::new(vars.clone(), cfg.adam())?;
    let mut record = TrainRunRecord {
        run_id: opts.run_id.clone(),
        task: task.name,
        model_config: model.config().clone(),
        train_config: cfg.clone(),
        augment_config: train.augment_config().clone(),
        optimizer: *adam.config(),
        loss: loss_kind,
        parameter_counts: Some(model.parameter_counts()),
        epoch_history: Vec::new(),
        stop_reason: StopReason::MaxEpochs,
        error: None,
        failed_epoch: None,
        best_epoch: None,
        best_val_acc: None,
        checkpoint_path: None,
        wall_clock_seconds: 0.0,
    };
    let mut best: Option<Vec<Tensor>> = None;

    for epoch in 1..=cfg.max_epochs {
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        dropout_rng.set_stream(epoch as u64);
        let outcome = run_epoch(model, train, epoch, cache, &mut adam, loss_kind, &mut dropout_rng)
            .and_then(|(train_loss, train_acc)| {
                let v = evaluate(model, val, Some(cache))?;
                Ok(EpochRecord {
                    epoch,
                    train_loss,
                    train_acc,
                    val_loss: v.loss,
                    val_acc: v.accuracy,
                })
            });
        let row = match outcome {
            Ok(row) => row,
            Err(e) => {
                log::warn!("{}: epoch {epoch} failed: {e}", opts.run_id);
                record.stop_reason = StopReason::Error;
                record.error = Some(e.to_string());
                record.failed_epoch = Some(epoch);
                break;
            }
        };
        log::info!(
            "{} epoch {epoch}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            opts.run_id,
            row.train_loss,
            row.train_acc,
            row.val_loss,
            row.val_acc
        );
        record.epoch_history.push(row);
        if record.best_val_acc.is_none_or(|b| row.val_acc > b) {
            record.best_val_acc = Some(row.val_acc);
            record.best_epoch = Some(epoch);
            best = Some(snapshot(&vars)?);
        }
        if row.val_acc > cfg.early_stop_val_acc {
            record.stop_reason = StopReason::EarlyStop;
            break;
        }
    }

    if let Some(weights) = &best {
        for (var, w) in vars.iter().zip(weights) {
            var.set(w)?;
        }
        if let Some(path) = &opts.checkpoint_path {
            save_checkpoint(model, path)?;
            record.checkpoint_path = Some(path.clone());
        }
    }
    record.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(record)
}

fn snapshot(vars: &[Var]) -> Result<Vec<Tensor>> {
    Ok(vars.iter().map(|v| v.as_tensor().copy()).collect::<candle_core::Result<_>>()?)
}

fn labels_tensor(targets: &[usize], model: &ModelHandle) -> Result<Tensor> {
    let labels: Vec<u32> = targets.iter().map(|&t| t as u32).collect();
    Ok(Tensor::new(labels, model.device())?)
}

fn check_targets(targets: &[usize], n_classes: usize) -> Result<()> {
    match targets.iter().find(|&&t| t >= n_classes) {
        Some(t) => Err(Error::Prediction(format!(
            "stream has class {t} but the model has {n_classes} outputs"
        ))),
        None => Ok(()),
    }
}

fn correct(logits: &Tensor, targets: &[usize]) -> Result<usize> {
    let pred = logits.argmax(1)?.to_vec1::<u32>()?;
    Ok(pred.iter().zip(targets).filter(|(p, t)| **p as usize == **t).count())
}

/// Backbone features for a batch, from the cache whenever that is valid.
fn batch_features(model: &ModelHandle, plan: &BatchPlan<'_>, cache: &FeatureCache) -> Result<Tensor> {
    if model.config().freeze_backbone && plan.is_pristine() {
        cache.features(model, plan)
    } else {
        model.features(&plan.load(model.device())?.images)
    }
}

fn run_epoch(
    model: &ModelHandle,
    stream: &BatchStream,
    epoch: usize,
    cache: &FeatureCache,
    adam: &mut Adam,
    loss_kind: LossKind,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let n_classes = model.config().n_classes;
    let (mut loss_sum, mut hits, mut seen) = (0.0, 0, 0);
    for plan in stream.plan(epoch as u64) {
        let targets = plan.targets();
        check_targets(&targets, n_classes)?;
        let n = targets.len();
        let (batch_loss, batch_hits, grads) = if model.config().freeze_backbone {
            let feats = batch_features(model, &plan, cache)?;
            let logits = model.head_logits(&feats, Some(rng))?;
            let loss = loss_kind.batch_loss(&logits, &labels_tensor(&targets, model)?)?;
            let value = f64::from(loss.to_dtype(DType::F32)?.to_scalar::<f32>()?);
            if !value.is_finite() {
                return Err(Error::Training(format!("non-finite training loss {value}")));
            }
            (value, correct(&logits, &targets)?, loss.backward()?)
        } else {
            fine_tune_step(model, &plan, &targets, loss_kind, rng)?
        };
        adam.step(&grads)?;
        loss_sum += batch_loss * n as f64;
        hits += batch_hits;
        seen += n;
    }
    Ok((loss_sum / seen as f64, hits as f64 / seen as f64))
}

/// Gradients of a whole batch accumulated over small chunks, so that the
/// backbone activations of only a few images are alive at once.
fn fine_tune_step(
    model: &ModelHandle,
    plan: &BatchPlan<'_>,
    targets: &[usize],
    loss_kind: LossKind,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize, GradStore)> {
    let batch = plan.load(model.device())?;
    let n = targets.len();
    let mut total: Option<GradStore> = None;
    let (mut loss_sum, mut hits) = (0.0, 0);
    let vars = model.trainable_vars();
    for start in (0..n).step_by(FINE_TUNE_CHUNK) {
        let len = FINE_TUNE_CHUNK.min(n - start);
        let images = batch.images.narrow(0, start, len)?;
        let chunk_targets = &targets[start..start + len];
        let logits = model.head_logits(&model.features(&images)?, Some(rng))?;
        let loss = loss_kind.batch_loss(&logits, &labels_tensor(chunk_targets, model)?)?;
        let value = f64::from(loss.to_scalar::<f32>()?);
        if !value.is_finite() {
            return Err(Error::Training(format!("non-finite training loss {value}")));
        }
        loss_sum += value * len as f64;
        hits += correct(&logits, chunk_targets)?;
        let grads = loss.affine(len as f64 / n as f64, 0.0)?.backward()?;
        total = Some(match total {
            None => grads,
            Some(mut acc) => {
                for var in &vars {
                    if let Some(g) = grads.get(var.as_tensor()) {
                        let sum = match acc.get(var.as_tensor()) {
                            Some(prev) => (prev + g)?,
                            None => g.clone(),
                        };
                        acc.insert(var.as_tensor(), sum);
                    }
                }
                acc
            }
        });
    }
    let grads = total.ok_or_else(|| Error::Training("empty batch".into()))?;
    Ok((loss_sum / n as f64, hits, grads))
}

/// Mean loss and accuracy of the model over a stream, without dropout.
pub fn evaluate(model: &ModelHandle, stream: &BatchStream, cache: Option<&FeatureCache>) -> Result<Evaluation> {
    let p = predict(model, stream, cache)?;
    let kind = loss_for_arity(model.config().n_classes)?;
    let n_classes = model.config().n_classes;
    let mut loss = 0.0;
    for (row, &t) in p.probabilities.iter().zip(&p.true_class) {
        let mut target = vec![0.0; n_classes];
        target[t] = 1.0;
        loss += kind.of_probabilities(row, &target);
    }
    let n = p.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: p.accuracy(),
    })
}

/// Model outputs over a stream, in stream order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub ids: Vec<String>,
    pub probabilities: Vec<Vec<f64>>,
    pub predicted_class: Vec<usize>,
    pub true_class: Vec<usize>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn accuracy(&self) -> f64 {
        let hits = self
            .predicted_class
            .iter()
            .zip(&self.true_class)
            .filter(|(p, t)| p == t)
            .count();
        hits as f64 / self.len() as f64
    }

    /// Probability of `class` for every row, e.g. ROC scores.
    pub fn scores(&self, class: usize) -> Vec<f64> {
        self.probabilities.iter().map(|r| r[class]).collect()
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Eval-mode class probabilities for every sample of an order-preserving
/// stream.
pub fn predict(model: &ModelHandle, stream: &BatchStream, cache: Option<&FeatureCache>) -> Result<Predictions> {
    let private_cache = FeatureCache::new();
    let cache = cache.unwrap_or(&private_cache);
    let n_classes = model.config().n_classes;
    let mut out = Predictions {
        ids: Vec::with_capacity(stream.len()),
        probabilities: Vec::with_capacity(stream.len()),
        predicted_class: Vec::with_capacity(stream.len()),
        true_class: Vec::with_capacity(stream.len()),
    };
    for plan in stream.plan(0) {
        if !plan.is_pristine() {
            return Err(Error::Prediction("prediction needs an un-augmented stream".into()));
        }
        let targets = plan.targets();
        check_targets(&targets, n_classes)?;
        let feats = batch_features(model, &plan, cache)?;
        let probs = model.probabilities_from_features(&feats)?.to_vec2::<f32>()?;
        for (row, (id, t)) in probs.into_iter().zip(plan.ids().into_iter().zip(targets)) {
            let row: Vec<f64> = row.into_iter().map(f64::from).collect();
            out.predicted_class.push(argmax(&row));
            out.probabilities.push(row);
            out.ids.push(id.to_string());
            out.true_class.push(t);
        }
    }
    Ok(out)
}

/// Per-variable copies, used to compare weights before and after training.
pub fn tensor_values(model: &ModelHandle) -> Result<HashMap<String, Vec<f32>>> {
    model
        .named_params()
        .iter()
        .map(|p| {
            let t = match &p.var {
                Some(v) => v.as_tensor().clone(),
                None => p.tensor.clone(),
            };
            Ok((p.name.clone(), t.flatten_all()?.to_vec1::<f32>()?))
        })
        .collect()
}
