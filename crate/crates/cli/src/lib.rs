//! `augex` command-line pipelines: ingest → fit → exchange, plus the
//! desk-scale simulate / train / gradnoise / flatness experiments.

pub mod manifest;
pub mod pipeline;
pub mod probe;
pub mod simulate;

use std::ffi::OsString;
use std::path::PathBuf;

use augex_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "augex",
    version,
    about = "Measure what data augmentation is worth in extra data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a results file and append it to the store.
    Ingest(pipeline::IngestArgs),
    /// Fit a learning curve to one stored curve key.
    Fit(pipeline::FitArgs),
    /// Effective extra samples between two curves, or exchange-ratio tables.
    Exchange(pipeline::ExchangeArgs),
    /// Run a training sweep on a synthetic task and store the results.
    Simulate(simulate::SimulateArgs),
    /// Train one model and write a checkpoint.
    Train(probe::TrainArgs),
    /// Gradient standard deviation of a checkpoint.
    Gradnoise(probe::GradnoiseArgs),
    /// Distance to a loss threshold along random directions.
    Flatness(probe::FlatnessArgs),
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MetricArg {
    Final,
    Peak,
}

impl From<MetricArg> for augex_core::store::Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Final => Self::Final,
            MetricArg::Peak => Self::Peak,
        }
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct StoreArg {
    /// Experiment store directory.
    #[arg(long, env = "AUGEX_STORE")]
    pub store: PathBuf,
}

/// Command failure: the exit code and the message for stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_INTERNAL
            },
            message: e.to_string(),
        }
    }
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Ingest(a) => pipeline::ingest(&a),
        Command::Fit(a) => pipeline::fit(&a),
        Command::Exchange(a) => pipeline::exchange(&a),
        Command::Simulate(a) => simulate::simulate(&a),
        Command::Train(a) => probe::train(&a),
        Command::Gradnoise(a) => probe::gradnoise(&a),
        Command::Flatness(a) => probe::flatness(&a),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
