use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

mod commands;
mod config;
mod error;

use config::RunConfig;
use error::CliError;

/// Layered image transmission experiments: train, transmit, decode, sweep.
///
/// Exit codes: 0 success, 2 configuration error, 3 runtime or numeric error,
/// 4 checkpoint or frame format mismatch, 5 incomplete model map in strict mode.
#[derive(Parser, Debug)]
#[command(name = "ds2c2", version)]
struct Cli {
    /// Configuration file with [section] key = value lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed (run.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (run.jobs).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (run.out_dir).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Fail when a sweep cell has no model (run.strict).
    #[arg(long, global = true)]
    strict: bool,
    /// Override one key, e.g. --set train.pe_train=8. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Train the base layer (compressor, refinement steps, discriminators).
    TrainBase,
    /// Train a codec against a frozen base layer (or directly, codec.source = direct).
    TrainResidual,
    /// Retrain a codec on a random subset of train.subset_size crops.
    Retrain,
    /// Send one image through the whole chain and write every intermediate.
    Transmit,
    /// Decode a received frame file.
    Decode,
    /// Evaluate checkpoints over the sweep grid and write CSV reports.
    Sweep,
    /// Compare latent structure of residual and original codings.
    Stats,
    /// Print the effective configuration.
    Config,
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply(o)?;
    }
    if let Some(s) = cli.seed {
        cfg.set("run.seed", &s.to_string())?;
    }
    if let Some(j) = cli.jobs {
        cfg.set("run.jobs", &j.to_string())?;
    }
    if let Some(d) = &cli.out_dir {
        cfg.set("run.out_dir", &d.to_string_lossy())?;
    }
    if cli.strict {
        cfg.set("run.strict", "true")?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let keys = config::keys_help();
    let mut cmd = Cli::command();
    for name in ["train-base", "train-residual", "retrain", "transmit", "decode", "sweep", "stats", "config"] {
        let help = keys.clone();
        cmd = cmd.mut_subcommand(name, |c| c.after_long_help(help));
    }
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let outcome = resolve(&cli).and_then(|cfg| commands::run(cli.command, &cfg));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code())
        }
    }
}
