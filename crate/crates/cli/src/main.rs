mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Budget-constrained calibration of lower predictive bounds on the time to
/// the first unsafe generation.
#[derive(Parser, Debug)]
#[command(name = "survcal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(Common),
    /// Simulate audited training outcomes and fit the probability model.
    Train(Common),
    /// Calibrate once on the calibration split and evaluate on the test split.
    Calibrate(Common),
    /// Run the budget/γ/α sweep and emit plots.
    Sweep(Common),
    /// Re-render plots from an existing sweep directory.
    Report(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run config; missing fields take their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (default: harness.out_dir, then $SURVCAL_OUT, then ./survcal-out).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Master seed, overriding the config.
    #[arg(long, value_name = "K")]
    seed: Option<u64>,
    /// Dotted-path override, e.g. `--set calibration.mode=basic`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Failure class, mapped to the exit status.
pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn report(&self) -> ExitCode {
        match self {
            Failure::Validation(e) => {
                eprintln!("error: invalid configuration: {e:#}");
                ExitCode::from(1)
            }
            Failure::Runtime(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => failure.report(),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (Command::Synth(common)
    | Command::Train(common)
    | Command::Calibrate(common)
    | Command::Sweep(common)
    | Command::Report(common)) = &cli.command;
    let config = RunConfig::resolve(common.config.as_deref(), &common.overrides, common.seed)
        .and_then(|c| c.validate().map(|()| c))
        .map_err(Failure::Validation)?;
    if let Some(threads) = common.threads {
        if threads == 0 {
            return Err(Failure::Validation(anyhow::anyhow!(
                "--threads must be at least 1"
            )));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    let out = config.out_dir(common.out.as_deref());
    match &cli.command {
        Command::Synth(_) => commands::synth(&config, &out),
        Command::Train(_) => commands::train(&config, &out),
        Command::Calibrate(_) => commands::calibrate(&config, &out),
        Command::Sweep(_) => commands::sweep(&config, &out),
        Command::Report(_) => commands::report(&config, &out),
    }
}
