//! Training: parameters, the layer executor, optimizers, early stopping and
//! the two-stage hint-then-distill pipeline.
//!
//! Every trainer shuffles the training split once per epoch with a stream
//! derived from the run seed and the epoch number, keeps the final partial
//! batch, evaluates on the validation split after each epoch and returns the
//! parameters of the best validation epoch.

use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

mod network;
mod optim;
mod params;
mod pipeline;

pub use network::Network;
pub use optim::{momentum_step, rmsprop_step, Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{init_params, param_shapes, Param, ParameterSet};
pub use pipeline::{
    evaluate, hint_guided_shapes, predict, stage1_hint_train, stage2_kd_train, train_fitnet, train_supervised,
    FitnetOutcome, HintSetup, TrainMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EarlyStopConfig {
    pub patience: usize,
    pub max_epochs: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            patience: 100,
            max_epochs: 500,
        }
    }
}

impl EarlyStopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::Config(alloc::format!(
                "need 1 <= patience <= max_epochs, got {} and {}",
                self.patience,
                self.max_epochs
            )));
        }
        Ok(())
    }
}

/// Settings shared by every trainer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub stop: EarlyStopConfig,
    /// Half-width `a` of the `U(-a, a)` initialization.
    pub init_halfwidth: Scalar,
    pub seed: u64,
    /// Per-epoch probability of mirroring each training example.
    pub flip_probability: Scalar,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::default(),
            stop: EarlyStopConfig::default(),
            init_halfwidth: 0.005,
            seed: 0,
            flip_probability: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.stop.validate()?;
        if !(self.init_halfwidth > 0.0 && self.init_halfwidth.is_finite()) {
            return Err(Error::Config(alloc::format!(
                "init half-width must be positive, got {}",
                self.init_halfwidth
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config(alloc::format!(
                "flip probability must be in [0, 1], got {}",
                self.flip_probability
            )));
        }
        Ok(())
    }
}

/// Training, validation and optional test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Option<Dataset>,
}

impl Splits {
    fn validate(&self) -> Result<()> {
        if self.train.is_empty() || self.validation.is_empty() {
            return Err(Error::Dataset("training and validation splits must be non-empty".into()));
        }
        let parts = [Some(&self.validation), self.test.as_ref()];
        for d in parts.into_iter().flatten() {
            if d.shape() != self.train.shape() || d.classes() != self.train.classes() {
                return Err(Error::Dataset(alloc::format!(
                    "split shapes differ: {} with {} classes vs {} with {} classes",
                    self.train.shape(),
                    self.train.classes(),
                    d.shape(),
                    d.classes()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Supervised,
    Hint,
    Distill,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Supervised => "supervised",
            Stage::Hint => "hint",
            Stage::Distill => "distill",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Misclassification,
    HintLoss,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Misclassification => "validation_error",
            Metric::HintLoss => "validation_hint_loss",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

impl StopReason {
    pub fn name(&self) -> &'static str {
        match self {
            StopReason::Patience => "patience",
            StopReason::MaxEpochs => "max_epochs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub train_loss: Scalar,
    pub validation: Scalar,
    /// Soft-term weight used in this epoch (distillation only).
    pub lambda: Option<Scalar>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub stage: Stage,
    pub metric: Metric,
    pub seed: u64,
    /// Validation metric before the first update.
    pub initial_validation: Scalar,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation: Scalar,
    pub stop_reason: StopReason,
    pub test_error: Option<Scalar>,
    /// Filled in by callers that measure time.
    pub wall_clock_seconds: Option<f64>,
}

/// Tracks the best validation value; strict improvement resets patience.
#[derive(Debug, Clone)]
pub(crate) struct EarlyStopper {
    config: EarlyStopConfig,
    best: Scalar,
    best_epoch: usize,
}

impl EarlyStopper {
    pub(crate) fn new(config: EarlyStopConfig) -> Self {
        EarlyStopper {
            config,
            best: Scalar::INFINITY,
            best_epoch: 0,
        }
    }

    /// Records `epoch`'s value; returns whether it improved on the best.
    pub(crate) fn observe(&mut self, epoch: usize, value: Scalar) -> bool {
        if value < self.best {
            self.best = value;
            self.best_epoch = epoch;
            true
        } else {
            false
        }
    }

    /// Reason to stop after `epoch` has been observed, if any.
    pub(crate) fn stop_after(&self, epoch: usize) -> Option<StopReason> {
        if epoch - self.best_epoch >= self.config.patience {
            Some(StopReason::Patience)
        } else if epoch + 1 >= self.config.max_epochs {
            Some(StopReason::MaxEpochs)
        } else {
            None
        }
    }
}
