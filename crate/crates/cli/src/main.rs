use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod output;

#[derive(Debug, Parser)]
#[command(name = "chargecast", version, about = "Spatio-temporal forecasting of daily charging sessions")]
struct Cli {
    /// JSON configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory shared by all subcommands.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Spatial {
    Icar,
    Spde,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Curate raw session logs into the daily panel and model frame.
    Ingest,
    /// Build the SPDE mesh and the kNN station graph.
    Mesh,
    /// Fit the latent Gaussian model on the training period.
    Fit {
        #[arg(long, value_enum)]
        spatial: Spatial,
    },
    /// Predict counts from a fitted model.
    Predict {
        /// Directory written by `fit`.
        #[arg(long)]
        fit: PathBuf,
        /// Frame JSON to predict for; the test period of the ingested frame by default.
        #[arg(long)]
        frame: Option<PathBuf>,
    },
    /// Fit per-station Poisson GLMs and predict the test period.
    Baseline,
    /// Score one prediction file against the test period.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// Model label; the file stem by default.
        #[arg(long)]
        model: Option<String>,
    },
    /// Score several prediction files and compare them station by station.
    Benchmark {
        /// `name=path` or `path` (named after the file stem).
        #[arg(required = true)]
        files: Vec<String>,
    },
    /// Weekday demand summary and the sessions-versus-chargers series.
    Eda,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
