use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use drn_core::imaging::{bicubic_resize, from_float, load_png_f32, save_png};
use drn_core::metrics::{
    evaluate, self_ensemble, BicubicUpscaler, EvalOptions, EvalPlane, ModelUpscaler, Upscaler,
};
use drn_core::training::{
    grad_check_suite, load_optimizer_state, save_training_checkpoint, sidecar_path, train, Dataset,
    LossKind, TrainOptions,
};
use drn_core::{Drn, ImageF32, ModelError};

use crate::{CliError, RunConfig};

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::InvalidConfig { .. } => CliError::Config(e.to_string()),
        other => CliError::Internal(other.to_string()),
    }
}

fn load_model(path: &Path) -> Result<Drn<f32>, CliError> {
    Drn::from_checkpoint(path).map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory of HR training PNGs.
    #[arg(long)]
    pub hr: PathBuf,
    /// Matching LR PNGs; bicubic degradation of the HR images when absent.
    #[arg(long)]
    pub lr: Option<PathBuf>,
    /// Final checkpoint path; the optimizer state goes to `<out>.adam`.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint and its `.adam` sidecar.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Per-step log file (standard output when absent).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Also write `ckpt_epoch_<e>` after every epoch into this directory.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LossArg::Mae)]
    pub loss: LossArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Mae,
    Mse,
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let run = RunConfig::load(&args.config)?;
    let model_cfg = run.model();
    let mut cfg = run.training();
    cfg.loss = match args.loss {
        LossArg::Mae => LossKind::Mae,
        LossArg::Mse => LossKind::Mse,
    };
    cfg.validate()?;
    model_cfg.validate().map_err(model_error)?;

    let (mut model, mut adam) = match &args.resume {
        None => (
            Drn::<f32>::with_seed(model_cfg.clone(), run.seed).map_err(model_error)?,
            cfg.adam(),
        ),
        Some(path) => {
            let mut model = load_model(path)?;
            if model.config() != &model_cfg {
                return Err(CliError::Checkpoint(format!(
                    "{}: checkpoint model {:?} differs from the config's {:?}",
                    path.display(),
                    model.config(),
                    model_cfg
                )));
            }
            let adam = load_optimizer_state(&mut model, sidecar_path(path))?;
            log::info!("resuming {} at step {}", path.display(), adam.t);
            (model, adam)
        }
    };
    let data = Dataset::load(&args.hr, args.lr.as_deref(), model_cfg.scale)?;

    let mut sink: Box<dyn Write> = match &args.log {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    let report = train(
        &mut model,
        &data,
        &cfg,
        &mut adam,
        TrainOptions {
            checkpoint_dir: args.checkpoint_dir.clone(),
            log: Some(&mut *sink),
        },
    )?;
    drop(sink);
    save_training_checkpoint(&model, &adam, &args.out)?;
    if let (Some(first), Some(last)) = (report.first_epoch_loss(), report.last_epoch_loss()) {
        log::info!(
            "steps {}..{}: mean loss {first:.6} -> {last:.6}; wrote {}",
            report.start_step,
            report.end_step,
            args.out.display()
        );
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct UpscaleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Average over the eight flips and rotations of the input.
    #[arg(long)]
    pub self_ensemble: bool,
}

pub fn cmd_upscale(args: &UpscaleArgs) -> Result<(), CliError> {
    let model = load_model(&args.ckpt)?;
    let lr = load_png_f32(&args.input)?;
    let x = lr.to_tensor();
    let y = if args.self_ensemble {
        self_ensemble(&model, &x)
    } else {
        model.infer(&x)
    }
    .map_err(model_error)?;
    let sr = ImageF32::from_tensor(&y, 0)?;
    save_png(&from_float(&sr), &args.output)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Bicubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlaneArg {
    Y,
    Rgb,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of HR ground-truth PNGs.
    #[arg(long)]
    pub hr: PathBuf,
    /// Matching LR PNGs; bicubic degradation of the HR images when absent.
    #[arg(long)]
    pub lr: Option<PathBuf>,
    #[arg(long)]
    pub scale: usize,
    #[arg(long, group = "upscaler", required = true)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_enum, group = "upscaler")]
    pub method: Option<Method>,
    #[arg(long, requires = "ckpt")]
    pub self_ensemble: bool,
    #[arg(long, value_enum, default_value_t = PlaneArg::Y)]
    pub plane: PlaneArg,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

/// Prints the report to `out`. Images that failed are listed on stderr
/// and turn the result into a data error after the report is printed.
pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if args.scale == 0 {
        return Err(CliError::Config("--scale must be at least 1".into()));
    }
    let model;
    let upscaler: Box<dyn Upscaler> = match (&args.ckpt, args.method) {
        (Some(path), _) => {
            model = load_model(path)?;
            if model.scale() != args.scale {
                return Err(CliError::Config(format!(
                    "checkpoint is x{}, --scale asks for x{}",
                    model.scale(),
                    args.scale
                )));
            }
            Box::new(ModelUpscaler {
                model: &model,
                self_ensemble: args.self_ensemble,
            })
        }
        (None, _) => Box::new(BicubicUpscaler),
    };
    let opts = EvalOptions {
        plane: match args.plane {
            PlaneArg::Y => EvalPlane::Y,
            PlaneArg::Rgb => EvalPlane::Rgb,
        },
    };
    let result = evaluate(
        upscaler.as_ref(),
        &args.hr,
        args.lr.as_deref(),
        args.scale,
        opts,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    let text = if args.json {
        serde_json::to_string_pretty(&result).map_err(|e| CliError::Internal(e.to_string()))? + "\n"
    } else {
        result.to_text()
    };
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Data(format!("cannot write report: {e}")))?;
    if result.failures.is_empty() {
        return Ok(());
    }
    for f in &result.failures {
        eprintln!("{}: {}", f.name, f.error);
    }
    Err(CliError::Data(format!(
        "{} image(s) failed to evaluate",
        result.failures.len()
    )))
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let report = grad_check_suite(args.seed);
    write!(out, "{report}").map_err(|e| CliError::Internal(e.to_string()))?;
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::GradCheck)
    }
}

#[derive(Debug, Args)]
pub struct BicubicArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub scale: usize,
    /// Shrink by `scale` instead of enlarging.
    #[arg(long)]
    pub down: bool,
}

pub fn cmd_bicubic(args: &BicubicArgs) -> Result<(), CliError> {
    let m = args.scale;
    if m == 0 {
        return Err(CliError::Config("--scale must be at least 1".into()));
    }
    let img = load_png_f32(&args.input)?;
    let (w, h) = if args.down {
        if img.width % m != 0 || img.height % m != 0 {
            return Err(CliError::Config(format!(
                "{}x{} is not divisible by {m}",
                img.width, img.height
            )));
        }
        (img.width / m, img.height / m)
    } else {
        (img.width * m, img.height * m)
    };
    save_png(&from_float(&bicubic_resize(&img, w, h)), &args.output)?;
    Ok(())
}
