//! `bpca`: simulate data, fit by coordinate ascent, and analyze the fits.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

/// Default output root when `--out` is omitted; each command writes to `<root>/<command>`.
const OUT_ROOT_VAR: &str = "BPCA_OUT_ROOT";

#[derive(Parser)]
#[command(name = "bpca", version, about = "Coordinate-ascent variational inference for Bayesian PCA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Io {
    /// JSON configuration for the command.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw X from the generative model.
    Simulate(Io),
    /// Run CAVI and write the trace and final state.
    Fit(Io),
    /// k = 1 dynamics: direction-error bounds, scaling decay, fixed points.
    #[command(name = "analyze-k1")]
    AnalyzeK1(Io),
    /// Correlation condition at a refined stationary point.
    Gcorr(Io),
    /// Hessian spectrum at a Newton-refined stationary point.
    Stationary(Io),
    /// Randomized inequality and divergence suites.
    Verify(Io),
}

impl Command {
    fn parts(&self) -> (&'static str, &Io) {
        match self {
            Command::Simulate(io) => ("simulate", io),
            Command::Fit(io) => ("fit", io),
            Command::AnalyzeK1(io) => ("analyze-k1", io),
            Command::Gcorr(io) => ("gcorr", io),
            Command::Stationary(io) => ("stationary", io),
            Command::Verify(io) => ("verify", io),
        }
    }
}

fn out_dir(name: &str, io: &Io) -> Result<PathBuf, CliError> {
    if let Some(out) = &io.out {
        return Ok(out.clone());
    }
    match std::env::var_os(OUT_ROOT_VAR) {
        Some(root) => Ok(PathBuf::from(root).join(name)),
        None => Err(CliError::Schema(format!("--out not given and {OUT_ROOT_VAR} is unset"))),
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let (name, io) = cli.command.parts();
    let out = output::OutDir::new(&out_dir(name, io)?);
    let raw = config::read_raw(&io.config)?;
    let base = io.config.parent().map(PathBuf::from).unwrap_or_default();
    match &cli.command {
        Command::Simulate(_) => commands::simulate(&config::parse(&raw)?, &out)?,
        Command::Fit(_) => commands::fit(&config::parse(&raw)?, &base, &out)?,
        Command::AnalyzeK1(_) => commands::analyze_k1(&config::parse(&raw)?, &base, &out)?,
        Command::Gcorr(_) => commands::gcorr(&config::parse(&raw)?, &base, &out)?,
        Command::Stationary(_) => commands::stationary(&config::parse(&raw)?, &base, &out)?,
        Command::Verify(_) => {
            let outcome = commands::verify(&config::parse(&raw)?, &out);
            out.write_meta(name, &raw)?;
            return outcome;
        }
    }
    out.write_meta(name, &raw)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bpca: {e}");
            ExitCode::from(e.code())
        }
    }
}
