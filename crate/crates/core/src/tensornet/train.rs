use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::model::{Mode, NetworkModel};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub schedule: LrSchedule,
}

/// Learning rate over the course of training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `learning_rate` to zero over all updates.
    Cosine,
}

impl LrSchedule {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::Argument(format!("unknown learning-rate schedule `{other}`"))),
        }
    }

    /// Rate for update `step` of `total` (0-based).
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => 0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos()),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 64,
            epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Argument("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Argument("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn initial(&self) -> Option<f64> {
        self.epoch_losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Mean squared error and its gradient w.r.t. `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}

/// Mini-batch ADAM on the mean squared error between `model(inputs)` and
/// `targets`. Shuffling is driven by `config.seed`.
pub fn train(model: &mut NetworkModel, inputs: &Tensor, targets: &Tensor, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let n = inputs.shape()[0];
    if n == 0 {
        return Err(Error::Argument("empty training set".into()));
    }
    if targets.shape()[0] != n {
        return Err(Error::dim("inputs and targets differ in sample count"));
    }
    let out = model.output_shape();
    if targets.shape()[1..] != out[..] {
        return Err(Error::dim(format!(
            "target shape {:?} does not match model output {:?}",
            &targets.shape()[1..],
            out
        )));
    }
    let sizes: Vec<usize> = model.params().iter().map(|p| p.data.len()).collect();
    let mut state = AdamState::new(&sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let total_steps = config.epochs * n.div_ceil(config.batch_size);
    let mut step_config = config.clone();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let x = inputs.select(Axis(0), idx);
            let t = targets.select(Axis(0), idx);
            let y = model.forward(&x, Mode::Train).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch} batch {b}: {msg}")),
                other => other,
            })?;
            let (loss, grad) = mse_loss(&y, &t);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch} batch {b}")));
            }
            total += loss * idx.len() as f64;
            let grads = model.backward(&grad)?;
            let mut params = model.params_mut();
            let mut slices: Vec<&mut [f64]> = params.iter_mut().map(|p| p.data.as_mut_slice()).collect();
            step_config.learning_rate = config.schedule.rate(config.learning_rate, step, total_steps);
            adam_step(&mut slices, &grads.params, &mut state, &step_config)?;
            step += 1;
        }
        epoch_losses.push(total / n as f64);
    }
    model.clear_cache();
    model.metadata.insert("train_config".into(), serde_json::to_string(config)?);
    model.metadata.insert("seed".into(), config.seed.to_string());
    model
        .metadata
        .insert("training_loss".into(), serde_json::to_string(&epoch_losses)?);
    Ok(TrainReport { epoch_losses })
}
