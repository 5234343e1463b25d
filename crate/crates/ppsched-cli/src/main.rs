//! Command-line front end for the pipeline-schedule toolkit.
//!
//! Four subcommands cover the workflow end to end: `build` synthesizes one
//! schedule and writes it as a versioned JSON artifact, `compare` tabulates
//! bubble rates of several schedule families across measured profiles,
//! `sweep` traces the bubble-rate-versus-memory-budget curve, and `render`
//! draws an executed schedule as an SVG Gantt chart.
//!
//! Exit codes: 0 on success, 2 for command-line usage errors, 1 for
//! computation or I/O failures. All outputs are byte-identical across
//! reruns with the same inputs.

mod commands;
mod files;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

/// Schedule synthesizer and analyzer for pipeline-parallel training.
#[derive(Parser)]
#[command(name = "ppsched", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build one schedule and write it as a JSON artifact.
    Build(BuildArgs),
    /// Tabulate bubble rates of several families across profiles.
    Compare(CompareArgs),
    /// Sweep the memory limit and report the bubble-rate curve.
    Sweep(SweepArgs),
    /// Render a schedule artifact as an SVG Gantt chart.
    Render(RenderArgs),
}

/// Where pass times come from. Exactly one source must be given; inline
/// times and profile files are in milliseconds.
#[derive(Args)]
struct TimesArgs {
    /// Profile file with measured pass times (JSON, milliseconds).
    #[arg(long, value_name = "FILE")]
    profile: Option<PathBuf>,
    /// Normalized regime: T_F = T_B = T_W = 1 unit, free communication.
    #[arg(long)]
    unit_times: bool,
    /// Forward pass time in milliseconds.
    #[arg(long, value_name = "MS")]
    t_f: Option<f64>,
    /// Input-gradient (backward) pass time in milliseconds.
    #[arg(long, value_name = "MS")]
    t_b: Option<f64>,
    /// Weight-gradient pass time in milliseconds.
    #[arg(long, value_name = "MS")]
    t_w: Option<f64>,
    /// Point-to-point communication latency in milliseconds.
    #[arg(long, value_name = "MS")]
    t_comm: Option<f64>,
}

#[derive(Args)]
struct BuildArgs {
    /// Schedule family: 1f1b, 1f1b-i, zb-h1, zb-h2, zb-v, or auto.
    #[arg(long)]
    family: String,
    /// Pipeline stages (defaults to the profile's value).
    #[arg(short = 'p', long = "stages", value_name = "P")]
    stages: Option<u32>,
    /// Microbatches per iteration (defaults to the profile's value).
    #[arg(short = 'm', long = "microbatches", value_name = "M")]
    microbatches: Option<u32>,
    #[command(flatten)]
    times: TimesArgs,
    /// Per-stage activation budget: pMB, 2pMB, ... or an absolute amount.
    #[arg(long, value_name = "LIMIT")]
    m_limit: Option<String>,
    /// Model chunks per stage for interleaved layouts.
    #[arg(long, value_name = "V")]
    chunks: Option<u32>,
    /// Output schedule path (default <family>_p<P>_m<M>.json).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Comma-separated families; auto accepts a budget suffix (auto:pMB).
    #[arg(long, value_name = "LIST")]
    families: String,
    /// Profile files, one table row each.
    #[arg(long, value_name = "FILE", num_args = 1.., required = true)]
    profiles: Vec<PathBuf>,
    /// CSV output path.
    #[arg(long, value_name = "FILE", default_value = "compare.csv")]
    csv: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Pipeline stages (defaults to the profile's value).
    #[arg(short = 'p', long = "stages", value_name = "P")]
    stages: Option<u32>,
    /// Microbatches per iteration (defaults to the profile's value).
    #[arg(short = 'm', long = "microbatches", value_name = "M")]
    microbatches: Option<u32>,
    #[command(flatten)]
    times: TimesArgs,
    /// Comma-separated memory limits (pMB forms or absolute); default
    /// sweeps pMB through 3pMB in single-forward steps.
    #[arg(long, value_name = "LIST")]
    limits: Option<String>,
    /// CSV output path.
    #[arg(long, value_name = "FILE", default_value = "sweep.csv")]
    csv: PathBuf,
    /// SVG curve output path.
    #[arg(long, value_name = "FILE", default_value = "sweep.svg")]
    svg: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Schedule artifact to draw.
    #[arg(long, value_name = "FILE")]
    schedule: PathBuf,
    #[command(flatten)]
    times: TimesArgs,
    /// SVG output path (default: schedule path with .svg extension).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// CLI failure split by exit code: usage problems exit 2, everything else 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Computation(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build(args) => commands::build(&args),
        Command::Compare(args) => commands::compare(&args),
        Command::Sweep(args) => commands::sweep(&args),
        Command::Render(args) => commands::render(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Computation(_) => ExitCode::from(1),
            }
        }
    }
}
