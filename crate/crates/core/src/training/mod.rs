//! Joint SGD training: momentum, weight decay, truncated BPTT, learning-rate
//! halving, checkpoints.

mod checkpoint;
mod schedule;
mod sgd;
mod trainer;

pub use checkpoint::{load_checkpoint, read_header, save_checkpoint, Checkpoint, CheckpointHeader, FORMAT_VERSION};
pub use schedule::{lr_schedule, ScheduleDecision};
pub use sgd::sgd_step;
pub use trainer::{run_epoch, train, EpochRecord, EpochStats};

use crate::error::{Error, Result};
use crate::linalg::{Real, Rng};
use crate::mixture::Nmm;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Model dropout probability for non-recurrent components.
    pub model_dropout: f64,
    pub batch_size: usize,
    pub bptt_steps: usize,
    pub max_epochs: usize,
    /// Minimum relative validation log-likelihood gain that counts as improvement.
    pub min_improvement: f64,
    /// Elementwise gradient clip; `None` disables clipping.
    pub clip: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    /// Penn Treebank setup.
    pub fn ptb() -> Self {
        Self {
            learning_rate: 0.4,
            momentum: 0.9,
            weight_decay: 4e-5,
            model_dropout: 0.4,
            batch_size: 200,
            bptt_steps: 5,
            max_epochs: 40,
            min_improvement: 1e-3,
            clip: None,
            seed: 1,
        }
    }

    /// Large-corpus setup: no momentum, model dropout or weight decay; batch 400.
    pub fn ltcb() -> Self {
        Self {
            momentum: 0.0,
            weight_decay: 0.0,
            model_dropout: 0.0,
            batch_size: 400,
            ..Self::ptb()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("learning_rate", self.learning_rate),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("min_improvement", self.min_improvement),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(
                    "train config",
                    format!("{name} must be finite and >= 0, got {v}"),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.model_dropout) {
            return Err(Error::invalid("train config", "model_dropout must lie in [0, 1]"));
        }
        if self.batch_size == 0 || self.bptt_steps == 0 {
            return Err(Error::invalid("train config", "batch_size and bptt_steps must be >= 1"));
        }
        if let Some(c) = self.clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::invalid("train config", "clip must be positive"));
            }
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::ptb()
    }
}

/// Mutable optimizer and schedule state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub lr: f64,
    /// Momentum buffers, laid out like the model.
    pub velocity: Nmm<T>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed SGD steps.
    pub step: usize,
    pub best_valid_ll: Option<f64>,
    pub halving: bool,
    pub stopped: bool,
    pub rng: Rng,
}

impl<T: Real> TrainState<T> {
    pub fn new(model: &Nmm<T>, config: &TrainConfig) -> Self {
        Self {
            lr: config.learning_rate,
            velocity: model.zeros_like(),
            epoch: 0,
            step: 0,
            best_valid_ll: None,
            halving: false,
            stopped: false,
            rng: Rng::new(config.seed),
        }
    }
}
