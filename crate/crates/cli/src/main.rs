//! `survcusum` command-line tool.

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;
mod spec;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{ArlArgs, ChartArgs, ExperimentArgs, FitArgs, Globals};
use error::{config, CliError, CliResult, EXIT_CONFIG};
use output::Format;

/// Risk-adjusted CUSUM monitoring of survival outcomes.
#[derive(Parser, Debug)]
#[command(name = "survcusum", version)]
struct Cli {
    /// Base seed for simulations; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "SURVCUSUM_THREADS")]
    threads: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Format of output tables.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a Cox model and write a risk-model document.
    Fit(FitArgs),
    /// Build charts for every hospital in a patient file.
    Chart(ChartArgs),
    /// Calibrate control limits by simulation.
    Calibrate(ExperimentArgs),
    /// Run-length and power experiments.
    Simulate(ExperimentArgs),
    /// Approximate average run lengths.
    Arl(ArlArgs),
}

fn set_threads(threads: Option<usize>) -> CliResult<()> {
    match threads {
        Some(0) => Err(config("--threads must be at least 1")),
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config(format!("cannot start thread pool: {e}"))),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    set_threads(cli.threads)?;
    let g = Globals {
        seed: cli.seed,
        out_dir: cli.out_dir,
        format: cli.format,
    };
    match &cli.command {
        Command::Fit(a) => commands::fit(&g, a),
        Command::Chart(a) => commands::chart(&g, a),
        Command::Calibrate(a) => commands::calibrate(&g, a),
        Command::Simulate(a) => commands::simulate(&g, a),
        Command::Arl(a) => commands::arl(&g, a),
    }
}

fn fail(err: &CliError) -> ExitCode {
    eprintln!("{}", err.to_json());
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.render().to_string().trim_end().to_string());
            debug_assert_eq!(err.exit_code(), EXIT_CONFIG);
            return fail(&err);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
