//! Deterministic mini-batch training loop.
//!
//! The schedule is queried once per batch at `t = global batch index`, so a
//! run of `epochs` epochs over `B` batches per epoch uses `t = 0..epochs*B`
//! and expects the schedule horizon `T0 = epochs * B`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::dataset::{Dataset, Split};
use crate::harness::model::{forward_backward, MlpModel, ParamBuffers};
use crate::harness::optim::sgd_momentum_step;
use crate::schedule::ScheduleSpec;

pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub loss: Loss,
}

/// `ceil(train_size / batch_size)`; the last partial batch is kept.
pub fn batches_per_epoch(train_size: usize, batch_size: usize) -> usize {
    train_size.div_ceil(batch_size)
}

impl TrainConfig {
    /// Checks the config against a train split of `train_size` samples.
    pub fn validate(&self, train_size: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if self.batch_size > train_size {
            return Err(Error::config(
                "train.batch_size",
                format!(
                    "batch_size ({}) must not exceed the train split size ({train_size})",
                    self.batch_size
                ),
            ));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::config(
                "train.momentum",
                format!("must lie in [0, 1), got {}", self.momentum),
            ));
        }
        self.schedule.validate().map_err(|e| match e {
            Error::Param { name, message } => Error::config(format!("schedule.{name}"), message),
            other => Error::config("schedule", other.to_string()),
        })?;
        if self.epochs > 0 {
            let horizon = self.horizon(train_size) as f64;
            if self.schedule.params.t0 != horizon {
                return Err(Error::config(
                    "schedule.t0",
                    format!(
                        "must equal epochs x batches per epoch = {horizon}, got {}",
                        self.schedule.params.t0
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Total number of optimizer steps.
    pub fn horizon(&self, train_size: usize) -> usize {
        self.epochs * batches_per_epoch(train_size, self.batch_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub final_test_error: f64,
    pub diverged: bool,
    pub config: TrainConfig,
    pub wall_time_s: f64,
}

impl RunRecord {
    /// Mean train loss of the last completed epoch.
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_train_loss)
    }
}

/// Fraction of the split misclassified under argmax (ties to the lowest class).
pub fn evaluate_error(model: &MlpModel, dataset: &Dataset, split: Split) -> Result<f64> {
    let idx = dataset.indices(split);
    if idx.is_empty() {
        return Err(Error::domain(format!("{split:?} split is empty")));
    }
    let (x, y) = dataset.gather(idx);
    let predicted = model.predict(&x)?;
    let wrong = predicted.iter().zip(&y).filter(|(p, y)| p != y).count();
    Ok(wrong as f64 / idx.len() as f64)
}

/// Trains `model` in place. A non-finite loss or parameter stops the run
/// and returns a record with `diverged = true`; the model keeps its last
/// finite parameters.
pub fn train(model: &mut MlpModel, dataset: &Dataset, config: &TrainConfig) -> Result<RunRecord> {
    dataset.validate()?;
    if model.input_dim() != dataset.num_features || model.output_dim() != dataset.num_classes {
        return Err(Error::Shape(format!(
            "model maps {} -> {} but dataset has {} features and {} classes",
            model.input_dim(),
            model.output_dim(),
            dataset.num_features,
            dataset.num_classes
        )));
    }
    let train_size = dataset.train.len();
    config.validate(train_size)?;

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order = dataset.train.clone();
    let mut velocity = ParamBuffers::zeros(model.dims());
    let mut steps = Vec::with_capacity(config.horizon(train_size));
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut diverged = false;
    let mut t_index = 0usize;

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let t = t_index as f64;
            let lr = config.schedule.lr(t)?;
            let (x, y) = dataset.gather(batch);
            let (loss, grads) = match forward_backward(model, &x, &y) {
                Ok(v) => v,
                Err(Error::Numerical(_)) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            steps.push(StepRecord { t, lr, loss });
            let (next, next_velocity) =
                sgd_momentum_step(model, &grads, &velocity, lr, config.momentum)?;
            if !next.params().is_finite() || !next_velocity.is_finite() {
                diverged = true;
                break 'epochs;
            }
            *model = next;
            velocity = next_velocity;
            loss_sum += loss * batch.len() as f64;
            t_index += 1;
        }
        epochs.push(EpochRecord {
            epoch,
            mean_train_loss: loss_sum / train_size as f64,
            test_error: evaluate_error(model, dataset, Split::Test)?,
        });
    }

    Ok(RunRecord {
        steps,
        epochs,
        final_test_error: evaluate_error(model, dataset, Split::Test)?,
        diverged,
        config: config.clone(),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}
