//! Loss, optimizer, patch sampling, the training loop and gradient checks.

mod adam;
mod data;
pub mod gradcheck;
mod loss;
mod state;
mod trainer;

pub use adam::{adam_step, AdamError, AdamState};
pub use data::{sample_batch, Batch, DataError, Dataset, Pick};
pub use gradcheck::{grad_check_suite, GradCheck, GradCheckReport};
pub use loss::{mae_grad, mae_loss, mse_grad, mse_loss, LossKind};
pub use state::{
    load_optimizer_state, save_optimizer_state, save_training_checkpoint, sidecar_path,
};
pub use trainer::{step_rng, train, EpochStats, TrainOptions, TrainReport};

use crate::model::{CheckpointError, ModelError};
use crate::tensor::TensorError;

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// LR patch side; HR patches are `scale` times larger.
    pub patch_size: usize,
    pub epochs: usize,
    /// Optimizer steps per epoch. The learning-rate schedule counts these
    /// epochs.
    pub steps_per_epoch: usize,
    pub base_lr: f64,
    pub lr_halve_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Random dihedral transform per sample.
    pub augment: bool,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            patch_size: 48,
            epochs: 800,
            steps_per_epoch: 1000,
            base_lr: 1e-4,
            lr_halve_every: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            augment: false,
            seed: 0,
            loss: LossKind::Mae,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let counts = [
            ("batch_size", self.batch_size),
            ("patch_size", self.patch_size),
            ("epochs", self.epochs),
            ("steps_per_epoch", self.steps_per_epoch),
            ("lr_halve_every", self.lr_halve_every),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(TrainError::Config {
                    field,
                    reason: "must be at least 1".into(),
                });
            }
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(TrainError::Config {
                field: "base_lr",
                reason: format!("must be positive and finite, got {}", self.base_lr),
            });
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::Config {
                    field,
                    reason: format!("must lie in [0, 1), got {b}"),
                });
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(TrainError::Config {
                field: "eps",
                reason: format!("must be positive and finite, got {}", self.eps),
            });
        }
        Ok(())
    }

    /// Fresh optimizer state with this config's hyperparameters.
    pub fn adam(&self) -> AdamState {
        AdamState {
            t: 0,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.epochs as u64 * self.steps_per_epoch as u64
    }
}

/// `base_lr * 0.5^floor(epoch / lr_halve_every)` for a zero-based epoch.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = (epoch / cfg.lr_halve_every).min(i32::MAX as usize) as i32;
    cfg.base_lr * 0.5f64.powi(halvings)
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {field} {reason}")]
    Config { field: &'static str, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("dataset scale {data} differs from model scale {model}")]
    ScaleMismatch { data: usize, model: usize },
    #[error("non-finite loss at step {step} (epoch {epoch}); aborting")]
    NonFiniteLoss { step: u64, epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optimizer(#[from] AdamError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("cannot write training log: {0}")]
    Log(#[source] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at_epoch(0, &cfg), 1e-4);
        assert_eq!(lr_at_epoch(199, &cfg), 1e-4);
        assert_eq!(lr_at_epoch(200, &cfg), 5e-5);
        assert_eq!(lr_at_epoch(450, &cfg), 2.5e-5);
        let mut prev = f64::INFINITY;
        for e in 0..2000 {
            let lr = lr_at_epoch(e, &cfg);
            assert!(lr <= prev);
            if e > 0 && e % 200 == 0 {
                assert_eq!(lr, prev / 2.0);
            }
            prev = lr;
        }
    }

    #[test]
    fn config_validation_names_field() {
        let bad = TrainConfig {
            steps_per_epoch: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(TrainError::Config {
                field: "steps_per_epoch",
                ..
            })
        ));
        let bad = TrainConfig {
            base_lr: -1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(TrainError::Config {
                field: "base_lr",
                ..
            })
        ));
        assert!(TrainConfig::default().validate().is_ok());
    }
}
