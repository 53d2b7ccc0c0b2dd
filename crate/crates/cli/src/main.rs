use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use snls_cli::{run, Command, Invocation};

/// Separable nonlinear least-squares and minimax fitting.
///
/// Exit status: 0 converged, 1 not converged (report still written),
/// 2 bad configuration or input (no report).
#[derive(Parser)]
#[command(name = "snls", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Flat `key = value` config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `t,y` CSV input
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output file (default: standard output)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Include per-iteration records in the report
    #[arg(long, global = true)]
    trace: bool,
    /// Write `timestamp: null` for reproducible reports
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// Noise seed for gen-data
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Fit with the linear parameters eliminated
    FitVarpro,
    /// Fit all parameters jointly
    FitJoint,
    /// Minimize the largest absolute residual
    FitMinimax,
    /// Run both least-squares drivers over a problem corpus
    Compare,
    /// Write a synthetic `t,y` dataset
    GenData,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let command = match cli.command {
        Cmd::FitVarpro => Command::FitVarpro,
        Cmd::FitJoint => Command::FitJoint,
        Cmd::FitMinimax => Command::FitMinimax,
        Cmd::Compare => Command::Compare,
        Cmd::GenData => Command::GenData,
    };
    let inv = Invocation {
        config_path: cli.config,
        data_path: cli.data,
        output_path: cli.out,
        trace: cli.trace,
        no_timestamp: cli.no_timestamp,
        seed: cli.seed,
    };
    match run(command, &inv) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("snls: {e}");
            ExitCode::from(2)
        }
    }
}
