//! Offline training: mini-batch Adam with plateau-halved learning rate and
//! accuracy-based early stopping. Fully deterministic per seed.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GestureModel, ModelParams, ParamKind};
use crate::seeds;
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_reduce_factor: f64,
    /// Epochs of stagnant validation loss before the learning rate halves.
    pub lr_patience: usize,
    /// Epochs of non-improving validation accuracy before training stops.
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub l1_coeff: f64,
    pub l2_coeff: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            initial_lr: 1e-3,
            lr_reduce_factor: 2.0,
            lr_patience: 5,
            early_stop_patience: 25,
            max_epochs: 500,
            l1_coeff: 1e-5,
            l2_coeff: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if self.initial_lr <= 0.0 || self.lr_reduce_factor <= 1.0 {
            return Err(Error::Config("initial_lr > 0 and lr_reduce_factor > 1 required".into()));
        }
        if self.lr_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config("patience values must be >= 1".into()));
        }
        if self.l1_coeff < 0.0 || self.l2_coeff < 0.0 {
            return Err(Error::Config("regularization coefficients must be non-negative".into()));
        }
        Ok(())
    }
}

/// One training example: a fixed-length [γ, λ, 3] window and its class.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub window: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Verdict after an epoch's validation pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackerAction {
    Continue,
    Stop,
}

/// Learning-rate and early-stop schedule: the rate halves when validation
/// loss fails to improve for `lr_patience` consecutive epochs; training
/// stops when validation accuracy has not improved for
/// `early_stop_patience` epochs.
#[derive(Debug, Clone)]
pub struct ProgressTracker {
    lr: f64,
    factor: f64,
    lr_patience: usize,
    stop_patience: usize,
    best_val_loss: f64,
    stall: usize,
    best_val_acc: f64,
    best_epoch: usize,
    epochs_seen: usize,
}

impl ProgressTracker {
    pub fn new(initial_lr: f64, factor: f64, lr_patience: usize, stop_patience: usize) -> Self {
        ProgressTracker {
            lr: initial_lr,
            factor,
            lr_patience,
            stop_patience,
            best_val_loss: f64::INFINITY,
            stall: 0,
            best_val_acc: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_seen: 0,
        }
    }

    /// Learning rate for the upcoming epoch.
    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_val_accuracy(&self) -> f64 {
        self.best_val_acc
    }

    /// Record one epoch's validation results. Returns whether accuracy
    /// improved (the caller snapshots parameters) and whether to continue.
    pub fn observe(&mut self, val_loss: f64, val_acc: f64) -> (bool, TrackerAction) {
        let epoch = self.epochs_seen;
        self.epochs_seen += 1;
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.stall = 0;
        } else {
            self.stall += 1;
            if self.stall == self.lr_patience {
                self.lr /= self.factor;
                self.stall = 0;
            }
        }
        let improved = val_acc > self.best_val_acc;
        if improved {
            self.best_val_acc = val_acc;
            self.best_epoch = epoch;
        }
        let action = if epoch - self.best_epoch >= self.stop_patience {
            TrackerAction::Stop
        } else {
            TrackerAction::Continue
        };
        (improved, action)
    }
}

/// Adam with bias correction (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(shapes: &[Vec<usize>]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// One update over all parameters with pre-averaged gradients.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (_, _, slot)) in params.slots_mut().into_iter().enumerate() {
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = Arc::make_mut(slot);
            for j in 0..g.numel() {
                let gj = g.data()[j];
                let mj = self.beta1 * m.data()[j] + (1.0 - self.beta1) * gj;
                let vj = self.beta2 * v.data()[j] + (1.0 - self.beta2) * gj * gj;
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                let update = lr * (mj / bc1) / ((vj / bc2).sqrt() + self.eps);
                p.data_mut()[j] -= update;
            }
        }
    }
}

/// Cross entropy of predicted probabilities against the true label, plus
/// L1/L2 penalties over the weight matrices (biases, masks and norm
/// parameters excluded).
pub fn loss(probs: &[f64], label: usize, params: &ModelParams, cfg: &TrainConfig) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Label(format!("label {label} out of range for {} classes", probs.len())));
    }
    Ok(-probs[label].ln() + regularization(params, cfg))
}

fn regularization(params: &ModelParams, cfg: &TrainConfig) -> f64 {
    if cfg.l1_coeff == 0.0 && cfg.l2_coeff == 0.0 {
        return 0.0;
    }
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for (_, kind, t) in params.named() {
        if kind == ParamKind::Weight {
            for v in t.data() {
                l1 += v.abs();
                l2 += v * v;
            }
        }
    }
    cfg.l1_coeff * l1 + cfg.l2_coeff * l2
}

/// Mean loss and accuracy of the model over a sample set (inference mode).
pub fn evaluate(
    model: &GestureModel,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty sample set".into()));
    }
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for s in samples {
        let probs = model.classify_window(&s.window)?;
        total_loss += loss(&probs, s.label, &model.params, cfg)?;
        let argmax = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probs"))
            .expect("non-empty probs")
            .0;
        if argmax == s.label {
            correct += 1;
        }
    }
    Ok((total_loss / samples.len() as f64, correct as f64 / samples.len() as f64))
}

/// Mini-batch Adam training. Returns the history; the model ends up holding
/// the parameters of the best-validation-accuracy epoch.
pub fn train(
    model: &mut GestureModel,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    train_with(model, train_set, val_set, cfg, |_, _| {})
}

/// [`train`] with a per-epoch observer (progress reporting).
pub fn train_with(
    model: &mut GestureModel,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &EpochStats),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Data("empty validation set".into()));
    }
    let class_count = model.vocab().len();
    for s in train_set.iter().chain(val_set) {
        if s.label >= class_count {
            return Err(Error::Label(format!(
                "label {} out of range for {class_count} classes",
                s.label
            )));
        }
    }

    let named = model.params.named();
    let shapes: Vec<Vec<usize>> = named.iter().map(|(_, _, t)| t.shape().to_vec()).collect();
    let kinds: Vec<ParamKind> = named.iter().map(|(_, k, _)| *k).collect();
    let mut adam = Adam::new(&shapes);
    let mut tracker = ProgressTracker::new(
        cfg.initial_lr,
        cfg.lr_reduce_factor,
        cfg.lr_patience,
        cfg.early_stop_patience,
    );
    let mut history = TrainHistory::default();
    let mut best_params: ModelParams = model.params.clone();

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.max_epochs {
        let lr = tracker.lr();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix_path(cfg.seed, &[1, epoch as u64]));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
            for (k, &sample_idx) in batch.iter().enumerate() {
                let sample = &train_set[sample_idx];
                let mut tape = Tape::new(true);
                let vars = model.vars(&mut tape, true);
                let window = tape.leaf(sample.window.clone(), false);
                let dropout_seed = seeds::mix_path(
                    cfg.seed,
                    &[2, epoch as u64, batch_idx as u64, k as u64],
                );
                let (logits, _) =
                    model.forward_window(&mut tape, &vars, window, true, dropout_seed)?;
                let ce = tape.cross_entropy(logits, sample.label)?;
                let mut total = ce;
                let flat = vars.flat();
                for (i, var) in flat.iter().enumerate() {
                    if kinds[i] != ParamKind::Weight {
                        continue;
                    }
                    if cfg.l1_coeff > 0.0 {
                        let a = tape.abs(*var)?;
                        let s = tape.sum_all(a)?;
                        let term = tape.scale(s, cfg.l1_coeff)?;
                        total = tape.add(total, term)?;
                    }
                    if cfg.l2_coeff > 0.0 {
                        let sq = tape.mul(*var, *var)?;
                        let s = tape.sum_all(sq)?;
                        let term = tape.scale(s, cfg.l2_coeff)?;
                        total = tape.add(total, term)?;
                    }
                }
                epoch_loss += tape.value(total).data()[0];
                let mut sample_grads = tape.backward(total)?;
                for (i, var) in flat.iter().enumerate() {
                    if let Some(g) = sample_grads.take(*var) {
                        for (acc, gv) in grads[i].data_mut().iter_mut().zip(g.data()) {
                            *acc += gv;
                        }
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                for v in g.data_mut() {
                    *v *= inv;
                }
            }
            adam.step(&mut model.params, &grads, lr);
        }

        let (val_loss, val_acc) = evaluate(model, val_set, cfg)?;
        let stats = EpochStats {
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            val_accuracy: val_acc,
            learning_rate: lr,
        };
        on_epoch(epoch, &stats);
        history.epochs.push(stats);
        let (improved, action) = tracker.observe(val_loss, val_acc);
        if improved {
            best_params = model.params.clone();
        }
        if action == TrackerAction::Stop {
            break;
        }
    }
    history.best_epoch = tracker.best_epoch();
    history.best_val_accuracy = tracker.best_val_accuracy();
    model.params = best_params;
    Ok(history)
}
