use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drn_cli::{
    cmd_bicubic, cmd_eval, cmd_gradcheck, cmd_train, cmd_upscale, init_threads, BicubicArgs,
    CliError, EvalArgs, GradcheckArgs, TrainArgs, UpscaleArgs,
};

/// Residual-distilling super-resolution: train, upscale and evaluate.
///
/// Exit codes: 1 gradient check failed, 2 configuration or usage error,
/// 3 data or I/O error, 4 non-finite loss, 5 checkpoint error,
/// 6 internal error.
#[derive(Debug, Parser)]
#[command(name = "drn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network on a directory of HR images.
    Train(TrainArgs),
    /// Super-resolve one PNG with a trained checkpoint.
    Upscale(UpscaleArgs),
    /// Report PSNR/SSIM over a directory of HR images.
    Eval(EvalArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Bicubic resize of one PNG by an integer factor.
    Bicubic(BicubicArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let stdout = &mut std::io::stdout().lock();
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Upscale(a) => cmd_upscale(&a),
        Command::Eval(a) => cmd_eval(&a, stdout),
        Command::Gradcheck(a) => cmd_gradcheck(&a, stdout),
        Command::Bicubic(a) => cmd_bicubic(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
