//! `siite`: run, sweep and inspect shift-invert imaginary-time evolution.
//!
//! Exit codes: 0 on success (variance or fidelity target reached), 1 on
//! configuration and I/O errors, 2 when a run hits `max_steps`, 3 when it
//! ends with `restart_advised`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Common;

#[derive(Parser)]
#[command(
    name = "siite",
    version,
    about = "Excited eigenstates of spin chains by shift-invert imaginary-time evolution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve one trajectory; writes steps.csv, run.json and the final state.
    Run(Flags),
    /// Disorder ensembles over a grid of W; writes realizations.csv and summary.csv.
    Sweep(Flags),
    /// Step counts of SIITE and conventional imaginary time to the ground state.
    CompareIte(Flags),
    /// Shot-noise estimate of one step's cost function.
    Shots(Flags),
    /// Energy error, entropies and the folding baseline for a finished run
    /// (`--config` names the run directory or its run.json).
    Analyze(Flags),
    /// Per-panel series of a finished run for plotting.
    ExportPlotdata(Flags),
}

#[derive(Args)]
struct Flags {
    /// JSON config (run directory or run.json for analyze and export-plotdata).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override a config key, e.g. `--set hamiltonian.W=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for sweep.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Seed override (disorder and warm start for run, the seed list for
    /// sweep, sampling for shots).
    #[arg(long)]
    seed: Option<u64>,
}

impl From<Flags> for Common {
    fn from(f: Flags) -> Self {
        Common {
            config: f.config,
            out: f.out,
            set: f.set,
            parallel: f.parallel,
            seed: f.seed,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(f) => commands::run(&f.into()),
        Command::Sweep(f) => commands::sweep(&f.into()),
        Command::CompareIte(f) => commands::compare(&f.into()),
        Command::Shots(f) => commands::shots(&f.into()),
        Command::Analyze(f) => commands::analyze(&f.into()),
        Command::ExportPlotdata(f) => commands::export_plotdata(&f.into()),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
