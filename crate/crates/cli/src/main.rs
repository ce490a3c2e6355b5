use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod ablate;
mod commands;

#[derive(Parser, Debug)]
#[command(name = "tinycd", version, about = "Train and run a lightweight Siamese U-Net change detector")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Force deterministic execution (the default in configs).
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Element precision: f32 or f64.
    #[arg(long, global = true)]
    pub precision: Option<tinycd::Precision>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes checkpoints, a per-epoch log and metrics.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(commands::EvalArgs),
    /// Predict the change mask of one image pair.
    Predict(commands::PredictArgs),
    /// Finite-difference check of every op and of the full model (64-bit).
    Gradcheck(commands::GradcheckArgs),
    /// Generate a synthetic bitemporal dataset.
    Synth(commands::SynthArgs),
    /// Train every cell of a configuration grid and tabulate the results.
    Ablate(ablate::AblateArgs),
}

/// Outcome of a command that ran to completion.
pub enum Status {
    Ok,
    /// A check ran but did not pass.
    CheckFailed,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tinycd::Error>() {
            return match e {
                tinycd::Error::Usage(_) | tinycd::Error::Config(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<commands::UsageError>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(&cli.common, a),
        Command::Eval(a) => commands::eval(&cli.common, a),
        Command::Predict(a) => commands::predict(&cli.common, a),
        Command::Gradcheck(a) => commands::gradcheck(&cli.common, a),
        Command::Synth(a) => commands::synth(&cli.common, a),
        Command::Ablate(a) => ablate::ablate(&cli.common, a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
