//! Command implementations behind the `drn` binary.
//!
//! Every command returns [`CliError`] on failure; its class fixes the
//! process exit code.

mod commands;
mod config;

pub use commands::{
    cmd_bicubic, cmd_eval, cmd_gradcheck, cmd_train, cmd_upscale, BicubicArgs, EvalArgs,
    GradcheckArgs, LossArg, Method, PlaneArg, TrainArgs, UpscaleArgs,
};
pub use config::RunConfig;

use drn_core::model::CheckpointError;
use drn_core::training::DataError;
use drn_core::{ImageError, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("gradient check failed")]
    GradCheck,
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    NonFinite(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::GradCheck => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::NonFinite(_) => 4,
            CliError::Checkpoint(_) => 5,
            CliError::Internal(_) => 6,
        }
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Checkpoint(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let msg = e.to_string();
        match e {
            TrainError::Config { .. } | TrainError::ScaleMismatch { .. } => CliError::Config(msg),
            TrainError::Data(_) | TrainError::Log(_) => CliError::Data(msg),
            TrainError::NonFiniteLoss { .. } => CliError::NonFinite(msg),
            TrainError::Checkpoint(_) => CliError::Checkpoint(msg),
            TrainError::Model(_) | TrainError::Tensor(_) | TrainError::Optimizer(_) => {
                CliError::Internal(msg)
            }
        }
    }
}

/// Applies `DRN_THREADS` (unset or 0 means one worker per core).
pub fn init_threads() -> Result<(), CliError> {
    let n = match std::env::var("DRN_THREADS") {
        Err(_) => return Ok(()),
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            CliError::Config(format!(
                "DRN_THREADS must be a non-negative integer, got {v:?}"
            ))
        })?,
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    Ok(())
}
