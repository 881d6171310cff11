//! `hlfr`: generate streams, build bound tables, run detectors and score them.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "hlfr", version, about = "Hierarchical linear four rates drift detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of independent runs.
    #[arg(long)]
    runs: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic streams and their drift times.
    Generate(Common),
    /// Simulate the LFR bound table.
    Boundtable(Common),
    /// Run the configured detectors and write event and prediction logs.
    Detect(Common),
    /// Score event logs: precision, recall, delay and prequential metrics.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory written by `detect` (default: the output directory).
        #[arg(long, conflicts_with = "events")]
        input: Option<PathBuf>,
        /// Single event log to score instead of a directory.
        #[arg(long, requires = "drifts")]
        events: Option<PathBuf>,
        /// Prediction log matching `--events`.
        #[arg(long, requires = "events")]
        predictions: Option<PathBuf>,
        /// Ground-truth drift times for `--events`.
        #[arg(long, requires = "events")]
        drifts: Option<PathBuf>,
    },
    /// Estimate LFR detection power over a grid of rate changes.
    Power(Common),
    /// Run all detectors on the same streams and summarise delays and accuracy.
    Compare(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Generate(c)
            | Command::Boundtable(c)
            | Command::Detect(c)
            | Command::Power(c)
            | Command::Compare(c) => c,
            Command::Evaluate { common, .. } => common,
        }
    }
}

fn resolve(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(runs) = common.runs {
        config.runs = runs;
    }
    config.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("hlfr_out"));
    Ok((config, out))
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common();
    if let Some(jobs) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()?;
    }
    let (mut config, out) = resolve(common)?;
    match &cli.command {
        Command::Generate(_) => commands::generate_streams(&config, &out),
        Command::Boundtable(c) => {
            let seed = c.seed.unwrap_or(config.table.seed);
            config.table.seed = seed;
            commands::build_table(&config, seed, &out)
        }
        Command::Detect(_) => commands::detect(&config, &out),
        Command::Evaluate {
            input,
            events,
            predictions,
            drifts,
            ..
        } => match (events, drifts) {
            (Some(e), Some(d)) => commands::evaluate_files(&config, e, d, predictions.as_deref(), &out),
            _ => {
                let input = input.clone().unwrap_or_else(|| out.clone());
                commands::evaluate_dir(&config, &input, &out)
            }
        },
        Command::Power(c) => {
            if let Some(runs) = c.runs {
                config.power.runs = runs;
            }
            commands::power(&config, config.seed, &out)
        }
        Command::Compare(_) => commands::compare(&config, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
