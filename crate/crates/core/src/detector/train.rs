use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::cnn::{Architecture, CnnModel};
use super::window::InvestigationWindow;
use super::{DetectorError, Result};
use crate::dataset::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_decay")]
    pub weight_decay: f64,
    /// Gradient norm cap per mini-batch.
    #[serde(default = "d_clip")]
    pub grad_clip: f64,
    #[serde(default)]
    pub seed: u64,
}

fn d_epochs() -> usize {
    30
}
fn d_batch() -> usize {
    32
}
fn d_lr() -> f64 {
    0.01
}
fn d_momentum() -> f64 {
    0.9
}
fn d_decay() -> f64 {
    1e-4
}
fn d_clip() -> f64 {
    5.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: d_epochs(),
            batch_size: d_batch(),
            learning_rate: d_lr(),
            momentum: d_momentum(),
            weight_decay: d_decay(),
            grad_clip: d_clip(),
            seed: 0,
        }
    }
}

/// Flattened inputs and 0/1 targets. Carries no user or slice identity.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainingSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl TrainingSet {
    pub fn from_windows<'a>(windows: impl IntoIterator<Item = &'a InvestigationWindow>) -> TrainingSet {
        let mut set = TrainingSet::default();
        for w in windows {
            set.push(w.flatten(), w.label == Label::Attacked);
        }
        set
    }

    pub fn push(&mut self, input: Vec<f64>, attacked: bool) {
        self.inputs.push(input);
        self.targets.push(if attacked { 1.0 } else { 0.0 });
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss per epoch.
    pub losses: Vec<f64>,
    pub accuracy: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `target`.
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

pub fn accuracy(model: &CnnModel, set: &TrainingSet) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let hits = set
        .inputs
        .iter()
        .zip(&set.targets)
        .filter(|(x, &y)| (model.forward(x).logit >= 0.0) == (y >= 0.5))
        .count();
    hits as f64 / set.len() as f64
}

/// Mini-batch SGD with momentum on binary cross-entropy.
pub fn train(arch: Architecture, rows: usize, dim: usize, set: &TrainingSet, cfg: &TrainConfig) -> Result<(CnnModel, TrainReport)> {
    if set.is_empty() {
        return Err(DetectorError::EmptyTrainingSet);
    }
    let mut model = CnnModel::init(arch, rows, dim, cfg.seed)?;
    for x in &set.inputs {
        model.check_input(x)?;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut velocity = model.zero_gradients();
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let mut grad = model.zero_gradients();
            let mut batch_loss = 0.0;
            for &i in batch {
                let t = model.forward(&set.inputs[i]);
                batch_loss += bce_with_logit(t.logit, set.targets[i]);
                model.backward(&set.inputs[i], &t, sigmoid(t.logit) - set.targets[i], &mut grad);
            }
            if !batch_loss.is_finite() {
                return Err(DetectorError::NanLoss { epoch, batch: b, loss: batch_loss });
            }
            total += batch_loss;
            grad.scale(1.0 / batch.len() as f64);
            let norm = grad.norm();
            if norm > cfg.grad_clip {
                grad.scale(cfg.grad_clip / norm);
            }
            velocity.scale(cfg.momentum);
            velocity.add(&grad);
            for (w, v) in model.tensors_mut().into_iter().zip(velocity.tensors()) {
                for (wi, vi) in w.iter_mut().zip(v) {
                    *wi -= cfg.learning_rate * (vi + cfg.weight_decay * *wi);
                }
            }
            model.bo -= cfg.learning_rate * velocity.bo;
        }
        losses.push(total / set.len() as f64);
    }
    let accuracy = accuracy(&model, set);
    Ok((model, TrainReport { losses, accuracy }))
}
