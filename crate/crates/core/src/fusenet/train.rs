use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FusionInput, FusionModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_lr: 5e-5,
            warmup_fraction: 0.1,
            batch_size: 128,
            weight_decay: 1e-4,
            max_epochs: 40,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_lr.is_finite() && self.max_lr > 0.0) {
            return Err(Error::Invalid("max_lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Invalid("warmup_fraction must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Invalid("batch_size and max_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Learning rate at the last step of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Linear warmup from 0 to `max_lr` over the first `warmup_fraction` of the
/// steps, then linear decay to 0 at `total_steps`. `step` is 0-based.
pub fn lr_at(step: usize, total_steps: usize, tc: &TrainConfig) -> f64 {
    let warmup = (tc.warmup_fraction * total_steps as f64).round() as usize;
    let t = step + 1;
    if t <= warmup {
        tc.max_lr * t as f64 / warmup as f64
    } else {
        let remaining = total_steps.saturating_sub(step) as f64;
        let span = (total_steps - warmup + 1) as f64;
        tc.max_lr * remaining / span
    }
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    decay_mask: Vec<bool>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamW {
    fn new(model: &FusionModel) -> Self {
        let mut decay_mask = vec![false; model.params.len()];
        for t in &model.tensors {
            if t.role.decays() {
                decay_mask[t.range()].iter_mut().for_each(|d| *d = true);
            }
        }
        Self {
            m: vec![0.0; model.params.len()],
            v: vec![0.0; model.params.len()],
            t: 0,
            decay_mask,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            if self.decay_mask[i] {
                params[i] -= lr * weight_decay * params[i];
            }
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

fn evaluate(model: &FusionModel, xs: &[FusionInput], ys: &[bool]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, &y) in xs.iter().zip(ys) {
        let z = model.logit(x)?;
        loss += super::bce_with_logit(z, f64::from(u8::from(y)));
        if (z > 0.0) == y {
            correct += 1;
        }
    }
    let n = xs.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch AdamW on binary cross-entropy with warmup/decay scheduling and
/// early stopping on validation loss. Returns the parameters of the best
/// validation epoch.
pub fn train(
    mut model: FusionModel,
    train_x: &[FusionInput],
    train_y: &[bool],
    val_x: &[FusionInput],
    val_y: &[bool],
    tc: &TrainConfig,
) -> Result<(FusionModel, TrainHistory)> {
    tc.validate()?;
    if train_x.is_empty() || val_x.is_empty() {
        return Err(Error::Invalid("training and validation sets must be non-empty".into()));
    }
    if train_x.len() != train_y.len() || val_x.len() != val_y.len() {
        return Err(Error::Invalid("inputs and labels differ in length".into()));
    }
    let positives = train_y.iter().filter(|&&y| y).count();
    if positives == 0 || positives == train_y.len() {
        return Err(Error::SingleClass("training labels".into()));
    }
    for x in train_x.iter().chain(val_x) {
        model.check_input(x)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let steps_per_epoch = train_x.len().div_ceil(tc.batch_size);
    let total_steps = steps_per_epoch * tc.max_epochs;
    let mut opt = AdamW::new(&model);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut since_best = 0usize;
    let mut step = 0usize;
    let mut grad = vec![0.0; model.params.len()];

    for epoch in 0..tc.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(tc.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let mask = (model.config.dropout > 0.0).then(|| model.dropout_mask(&mut rng));
                let y = f64::from(u8::from(train_y[i]));
                epoch_loss += model.accumulate_gradient(&train_x[i], y, mask, scale, &mut grad);
            }
            lr = lr_at(step, total_steps, tc);
            opt.step(&mut model.params, &grad, lr, tc.weight_decay);
            step += 1;
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Invalid(format!("parameters diverged in epoch {epoch}")));
        }
        let (val_loss, val_accuracy) = evaluate(&model, val_x, val_y)?;
        history.epochs.push(EpochRecord {
            train_loss: epoch_loss / train_x.len() as f64,
            val_loss,
            val_accuracy,
            lr,
        });
        let improved = best.as_ref().is_none_or(|(b, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, model.params.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > tc.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}
