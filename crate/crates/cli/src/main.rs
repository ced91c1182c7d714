mod commands;
mod manifest;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stancealign::error::Error;

/// Survey-response alignment: data preparation, training, evaluation and reports.
#[derive(Debug, Parser)]
#[command(name = "stancealign", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Directory holding datasets, splits and argument corpora.
    #[arg(long, global = true, default_value = "data")]
    pub data_dir: PathBuf,
    /// Results root (store, checkpoints, manifests, reports).
    #[arg(long, global = true, env = "STANCEALIGN_RESULTS", default_value = "results")]
    pub results: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "STANCEALIGN_WORKERS", default_value_t = 0)]
    pub workers: usize,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset file and store it in canonical form.
    Ingest(commands::IngestArgs),
    /// Materialize a recoding-scheme variant of a dataset.
    Recode(commands::RecodeArgs),
    /// Create the train/test split of a dataset.
    Split(commands::SplitArgs),
    /// Generate argument corpora and per-unit SFT demonstrations.
    SftBuild(commands::SftBuildArgs),
    /// Train one unit and write its checkpoint and training log.
    Train(commands::TrainArgs),
    /// Score a method on held-out questions and append to the results store.
    Evaluate(commands::EvaluateArgs),
    /// Fit the two-dimensional political space and project every unit.
    AnalyzePca(commands::PcaArgs),
    /// Run an experiment over many cells.
    Experiment(commands::ExperimentArgs),
    /// Emit tables and figures from the results store.
    Report(commands::ReportArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .filter_map(|e| e.downcast_ref::<Error>())
        .any(Error::is_validation);
    if validation || err.downcast_ref::<commands::Usage>().is_some() {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
