//! Command-line experiment runner for `bkam-core`.
//!
//! Every subcommand reads one JSON config and writes one CSV table. Exit
//! codes: 0 success, 2 configuration or I/O problem, 3 numerical failure.

// `!(x > 0.0)` style checks are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;
#[doc(hidden)]
pub mod fuzzing;
pub mod report;

use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(#[from] bkam_core::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bkam", version, about = "Experiments on b-symplectic action-angle charts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// CSV destination; overrides `output` in the config. Standard output when neither is set.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Sample a trajectory: t, phi_i, y_i, H.
    Simulate,
    /// Angle frequencies of a sampled trajectory.
    Freq,
    /// Exhaustive small-divisor scan of a frequency vector.
    Diophantine,
    /// Kolmogorov iteration history on Z.
    Knf,
    /// Invariant-torus construction over a list of epsilons.
    Kam,
    /// Period lattice and modular period.
    Lattice,
    /// Names of the built-in systems.
    ExampleList,
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig, CliError> {
    let path = path.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text)
}

/// What an invocation prints: `stdout` carries the CSV unless it went to a
/// file, in which case the summary goes there instead of `stderr`.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct Printed {
    pub stdout: String,
    pub stderr: String,
}

pub fn run(cli: &Cli) -> Result<Printed, CliError> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        // A pool can only be installed once per process; later calls keep the first.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let (output, out_path) = if cli.command == Command::ExampleList {
        (commands::example_list()?, cli.out.clone())
    } else {
        let cfg = load_config(cli.config.as_ref())?;
        let out = match cli.command {
            Command::Simulate => commands::simulate(&cfg)?,
            Command::Freq => commands::freq(&cfg)?,
            Command::Diophantine => commands::diophantine(&cfg)?,
            Command::Knf => commands::knf(&cfg)?,
            Command::Kam => commands::kam(&cfg)?,
            Command::Lattice => commands::lattice(&cfg)?,
            Command::ExampleList => unreachable!(),
        };
        (out, cli.out.clone().or(cfg.output))
    };
    let summary = output.summary.map(|s| s + "\n").unwrap_or_default();
    match out_path {
        Some(p) => {
            fs::write(&p, output.csv.as_bytes()).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            Ok(Printed { stdout: summary, stderr: String::new() })
        }
        None => Ok(Printed { stdout: output.csv, stderr: summary }),
    }
}
