use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smoothers_cli::config::ExperimentConfig;
use smoothers_cli::{report, runner, CliError};

/// Monte-Carlo experiment harness for iterated Gaussian smoothers.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        /// Path to the TOML experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_dir` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the worker-thread count (0 = one per core).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// List the available smoother variants.
    ListSmoothers,
    /// Check a config file without running anything.
    Validate {
        /// Path to the TOML experiment config.
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("I/O error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            trials,
            workers,
        } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            if let Some(trials) = trials {
                config.trials = trials;
            }
            if let Some(workers) = workers {
                config.workers = workers;
            }
            config.validate()?;
            let out_dir = out
                .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
                .ok_or_else(|| {
                    CliError::Config(
                        "no output directory: set `output_dir` in the config or pass --out".into(),
                    )
                })?;
            let data = runner::run_trials(&config)?;
            report::write_all(&config, &data, &out_dir)?;
            println!(
                "wrote metrics for {} smoothers x {} trials to {}",
                config.smoothers.len(),
                config.trials,
                out_dir.display()
            );
            Ok(())
        }
        Command::ListSmoothers => {
            for variant in smoothers::SmootherVariant::ALL {
                println!("{variant}");
            }
            Ok(())
        }
        Command::Validate { config } => {
            ExperimentConfig::load(&config)?;
            println!("configuration OK");
            Ok(())
        }
    }
}
