use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    adam_step, lr_at_epoch, sample_batch, save_training_checkpoint, AdamState, Dataset,
    TrainConfig, TrainError,
};
use crate::model::Drn;

/// Keeps batch streams apart from the parameter-initialization streams
/// drawn from the same user seed.
const BATCH_KEY: u64 = 0x6261_7463_6865_7321;

/// Generator for the batch of (zero-based) step `step`. Every step owns a
/// stream, so a run resumed at any step draws the same batches.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BATCH_KEY);
    rng.set_stream(step);
    rng
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Receives `ckpt_epoch_<e>` after every completed epoch and
    /// `ckpt_final` at the end, each with its optimizer sidecar.
    pub checkpoint_dir: Option<PathBuf>,
    /// Receives one `epoch <e> step <s> loss <v> lr <v>` line per step.
    pub log: Option<&'a mut dyn Write>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// One-based epoch number.
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Optimizer step count before and after this call.
    pub start_step: u64,
    pub end_step: u64,
}

impl TrainReport {
    pub fn first_epoch_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.mean_loss)
    }

    pub fn last_epoch_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

struct EpochAccum {
    epoch: usize,
    steps: usize,
    loss_sum: f64,
    started: Instant,
}

/// Runs optimizer steps `adam.t .. cfg.total_steps()`.
///
/// A fresh [`AdamState`] trains from scratch; a restored one continues
/// where it stopped, with the same batches and schedule an uninterrupted
/// run would have used. Step numbers in the log are one-based and global.
pub fn train(
    model: &mut Drn<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    adam: &mut AdamState,
    mut opts: TrainOptions<'_>,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if data.scale() != model.scale() {
        return Err(TrainError::ScaleMismatch {
            data: data.scale(),
            model: model.scale(),
        });
    }
    data.check_patch(cfg.patch_size)?;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::Checkpoint(e.into()))?;
    }

    let spe = cfg.steps_per_epoch as u64;
    let total = cfg.total_steps();
    let mut report = TrainReport {
        start_step: adam.t,
        end_step: adam.t,
        ..TrainReport::default()
    };
    let mut open: Option<EpochAccum> = None;

    for step in adam.t..total {
        let epoch = (step / spe) as usize;
        let lr = lr_at_epoch(epoch, cfg);
        let batch = sample_batch(
            data,
            cfg.batch_size,
            cfg.patch_size,
            cfg.augment,
            &mut step_rng(cfg.seed, step),
        )?;

        model.zero_grad();
        let out = model.forward_train(&batch.lr)?;
        let loss = cfg.loss.loss(&out, &batch.hr)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step: step + 1,
                epoch: epoch + 1,
            });
        }
        let grad = cfg.loss.grad(&out, &batch.hr)?;
        model.backward(&grad)?;
        adam_step(model.params_mut(), adam, lr)?;
        report.end_step = adam.t;

        if let Some(log) = opts.log.as_mut() {
            writeln!(
                log,
                "epoch {} step {} loss {loss} lr {lr}",
                epoch + 1,
                step + 1
            )
            .map_err(TrainError::Log)?;
        }
        let acc = open.get_or_insert_with(|| EpochAccum {
            epoch,
            steps: 0,
            loss_sum: 0.0,
            started: Instant::now(),
        });
        acc.steps += 1;
        acc.loss_sum += loss;

        let epoch_done = (step + 1) % spe == 0;
        if epoch_done || step + 1 == total {
            let acc = open.take().expect("accumulator was just opened");
            let stats = EpochStats {
                epoch: acc.epoch + 1,
                steps: acc.steps,
                mean_loss: acc.loss_sum / acc.steps as f64,
                seconds: acc.started.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {} done: mean loss {:.6}, {:.1} s",
                stats.epoch,
                stats.mean_loss,
                stats.seconds
            );
            report.epochs.push(stats);
            if let (true, Some(dir)) = (epoch_done, &opts.checkpoint_dir) {
                save_training_checkpoint(
                    model,
                    adam,
                    dir.join(format!("ckpt_epoch_{}", epoch + 1)),
                )?;
            }
        }
    }
    if let Some(dir) = &opts.checkpoint_dir {
        save_training_checkpoint(model, adam, dir.join("ckpt_final"))?;
    }
    if let Some(log) = opts.log.as_mut() {
        log.flush().map_err(TrainError::Log)?;
    }
    Ok(report)
}
