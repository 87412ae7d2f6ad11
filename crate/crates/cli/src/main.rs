//! `modematch`: derive mode-matched priors, fit two-level data, run the
//! simulation study and render its figures.
//!
//! Exit codes: 0 on success (warnings allowed), 2 for usage and validation
//! errors, 3 for numeric failures.

mod fit;
mod prior;
mod report;
mod simulate;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "modematch", version, about = "Mode-matched inverse-gamma priors for two-level models")]
struct Cli {
    /// Master seed; a fixed default keeps runs reproducible.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an inverse-gamma prior and write its derivation.
    Prior(prior::PriorArgs),
    /// Fit a CSV dataset under one or more estimation regimes.
    Fit(fit::FitArgs),
    /// Run a study plan and write metrics.csv.
    Simulate(simulate::SimulateArgs),
    /// Render SVG figures from a metrics.csv.
    Report(report::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = cli.seed;
    let out = cli.out;
    let result = fs::create_dir_all(&out)
        .with_context(|| format!("cannot create output directory {}", out.display()))
        .and_then(|()| match cli.command {
            Command::Prior(args) => prior::run(&args, &out),
            Command::Fit(args) => fit::run(&args, seed, &out),
            Command::Simulate(args) => simulate::run(&args, seed, &out),
            Command::Report(args) => report::run(&args, &out),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .any(|cause| cause.downcast_ref::<modematch::Error>().is_some_and(|e| e.is_numeric()));
    if numeric {
        3
    } else {
        2
    }
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub(crate) fn create_file(path: &Path) -> anyhow::Result<fs::File> {
    fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

pub(crate) fn read_file(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}
