use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{AlesalModel, AlesalParams};
use super::WindowInput;
use crate::error::{Error, Result};
use crate::nn::params::digest;
use crate::nn::ops::softmax_rows;
use crate::nn::{softmax_cross_entropy, Adam, AdamConfig, Parameters};
use crate::NUM_CLASSES;

/// Loss, correct count and batch-mean gradients of one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchResult<P> {
    /// Mean loss over the batch.
    pub loss: f64,
    pub correct: usize,
    pub grads: P,
}

/// A classifier that [`fit`] can train.
pub trait Trainable {
    type Input: Sync;
    type Params: Parameters + Clone;

    fn params(&self) -> &Self::Params;
    fn params_mut(&mut self) -> &mut Self::Params;

    /// Called once with the training inputs before the first epoch.
    fn prepare(&mut self, _inputs: &[&Self::Input]) {}

    /// Training-mode forward and backward pass. May update internal state
    /// such as batch-norm running statistics.
    fn batch_gradients(&mut self, inputs: &[&Self::Input], labels: &[usize]) -> Result<BatchResult<Self::Params>>;

    /// Evaluation-mode class probabilities.
    fn predict_proba(&self, inputs: &[&Self::Input]) -> Result<Vec<[f64; NUM_CLASSES]>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Fraction of each class held out for early stopping.
    pub val_fraction: f64,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { max_epochs: 60, batch_size: 32, adam: AdamConfig::default(), val_fraction: 0.1, patience: 10, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParam("epochs and batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidParam(format!("validation fraction {} outside [0, 1)", self.val_fraction)));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidParam(format!("learning rate {} must be positive", self.adam.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    /// SHA-256 of the parameters after the epoch.
    pub param_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Stratified split of `labels` into (train, validation) index lists. Each
/// class contributes `round(fraction × count)` items to validation, while
/// keeping at least one training item per class.
pub fn split_validation(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5b11);
    let mut train = Vec::new();
    let mut val = Vec::new();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_val = ((fraction * idx.len() as f64).round() as usize).min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Mean cross-entropy and accuracy of evaluation-mode predictions.
pub fn evaluate_loss<M: Trainable>(model: &M, inputs: &[&M::Input], labels: &[usize]) -> Result<(f64, f64)> {
    let probs = model.predict_proba(inputs)?;
    let mut loss = 0.0;
    let mut correct = 0;
    for (p, &y) in probs.iter().zip(labels) {
        loss -= p[y].max(crate::nn::PROB_FLOOR).ln();
        if argmax(p) == y {
            correct += 1;
        }
    }
    let n = labels.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Index of the largest probability; the lowest index wins ties.
pub fn argmax(p: &[f64; NUM_CLASSES]) -> usize {
    let mut best = 0;
    for k in 1..NUM_CLASSES {
        if p[k] > p[best] {
            best = k;
        }
    }
    best
}

/// Mini-batch Adam training with a stratified validation hold-out and early
/// stopping on validation loss. The best parameters are restored at the end.
/// Deterministic for a given `config.seed`.
pub fn fit<M: Trainable>(model: &mut M, inputs: &[M::Input], labels: &[usize], config: &TrainConfig) -> Result<TrainHistory> {
    check_labels(inputs.len(), labels)?;
    let (train_idx, val_idx) = split_validation(labels, config.val_fraction, config.seed);
    fit_with_split(model, inputs, labels, train_idx, val_idx, config)
}

fn check_labels(n: usize, labels: &[usize]) -> Result<()> {
    if n != labels.len() || n == 0 {
        return Err(Error::InvalidParam(format!("{n} inputs with {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= NUM_CLASSES) {
        return Err(Error::InvalidParam(format!("label {bad} outside {NUM_CLASSES} classes")));
    }
    Ok(())
}

/// As [`fit`] with an explicit train/validation index split. Validation
/// items only feed early stopping, never a gradient.
pub fn fit_with_split<M: Trainable>(
    model: &mut M,
    inputs: &[M::Input],
    labels: &[usize],
    mut train_idx: Vec<usize>,
    val_idx: Vec<usize>,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    check_labels(inputs.len(), labels)?;
    if train_idx.is_empty() || train_idx.iter().chain(&val_idx).any(|&i| i >= inputs.len()) {
        return Err(Error::InvalidParam("train/validation indices empty or out of range".into()));
    }
    let train_refs: Vec<&M::Input> = train_idx.iter().map(|&i| &inputs[i]).collect();
    model.prepare(&train_refs);
    let val_inputs: Vec<&M::Input> = val_idx.iter().map(|&i| &inputs[i]).collect();
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam);
    let mut records = Vec::new();
    let mut best: Option<(f64, usize, M::Params)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=config.max_epochs {
        train_idx.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in train_idx.chunks(config.batch_size) {
            let xs: Vec<&M::Input> = chunk.iter().map(|&i| &inputs[i]).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let r = model.batch_gradients(&xs, &ys).map_err(|e| diverged(e, epoch))?;
            if !r.loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += r.loss * chunk.len() as f64;
            correct += r.correct;
            adam.step(model.params_mut(), &r.grads)?;
        }
        let n = train_idx.len() as f64;
        let (val_loss, val_acc) = if val_idx.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_loss(model, &val_inputs, &val_labels).map_err(|e| diverged(e, epoch))?;
            if !l.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            (Some(l), Some(a))
        };
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy: val_acc,
            param_digest: digest(model.params()),
        };
        debug!("epoch {epoch}: train loss {:.4} acc {:.3}, val loss {:?} acc {:?}", rec.train_loss, rec.train_accuracy, val_loss, val_acc);
        records.push(rec);
        let score = val_loss.unwrap_or(loss_sum / n);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, model.params().clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if !val_idx.is_empty() && since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    *model.params_mut() = params;
    info!("training finished after {} epochs, best epoch {best_epoch}", records.len());
    Ok(TrainHistory { epochs: records, best_epoch, stopped_early, train_indices: sorted(train_idx), val_indices: val_idx })
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Divergence { epoch },
        other => other,
    }
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

impl Trainable for AlesalModel {
    type Input = WindowInput;
    type Params = AlesalParams;

    fn params(&self) -> &AlesalParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut AlesalParams {
        &mut self.params
    }

    fn prepare(&mut self, inputs: &[&WindowInput]) {
        self.input_norm = super::InputNorm::fit(inputs.iter().copied());
    }

    fn batch_gradients(&mut self, inputs: &[&WindowInput], labels: &[usize]) -> Result<BatchResult<AlesalParams>> {
        let fwd = self.forward_batch(inputs, true)?;
        let ce = softmax_cross_entropy(&fwd.logits, labels)?;
        let correct = (0..labels.len())
            .filter(|&i| {
                let r = ce.probs.row(i);
                argmax(&[r[0], r[1], r[2]]) == labels[i]
            })
            .count();
        let grads = self.backward_batch(&fwd, &ce.dlogits)?;
        self.update_running_stats(&fwd);
        Ok(BatchResult { loss: ce.loss, correct, grads })
    }

    fn predict_proba(&self, inputs: &[&WindowInput]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(64) {
            let fwd = self.forward_batch(chunk, false)?;
            let probs = softmax_rows(&fwd.logits)?;
            out.extend((0..chunk.len()).map(|i| {
                let r = probs.row(i);
                [r[0], r[1], r[2]]
            }));
        }
        Ok(out)
    }
}
