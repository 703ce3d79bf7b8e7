#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! `goldenrate <command> --config <path> [--set key=value ...] --out <dir>
//! --workers N --seed S`
//!
//! Exit codes: 0 success, 1 validation error, 2 numerical failure (any point
//! failed), 3 I/O error.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};

use crate::config::Command;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CommandArg {
    /// Lineshape C(t): closed form and quadrature columns.
    Lineshape,
    /// A single rate at `delta_e`.
    Rate,
    /// Rates over `grid.delta_e`.
    Sweep,
    /// Monte Carlo checks: cumulant factor, averaged rate, populations.
    McValidate,
    /// Two-state master equation for given rates.
    MePropagate,
}

impl From<CommandArg> for Command {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::Lineshape => Command::Lineshape,
            CommandArg::Rate => Command::Rate,
            CommandArg::Sweep => Command::Sweep,
            CommandArg::McValidate => Command::McValidate,
            CommandArg::MePropagate => Command::MePropagate,
        }
    }
}

/// Golden-rule transfer rates for a two-state system in a harmonic bath.
#[derive(Debug, Parser)]
#[command(name = "goldenrate", version)]
struct Cli {
    #[arg(value_enum)]
    command: CommandArg,
    /// JSON configuration file (a run manifest is accepted as well).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration: fig1, fig2, fig3 or fig4.
    #[arg(long)]
    preset: Option<String>,
    /// Override a configuration key, e.g. `--set bath.theta=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Master seed for Monte Carlo runs (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: &Cli) -> Result<usize, CliError> {
    let command: Command = cli.command.into();
    let mut doc = config::load_document(cli.config.as_deref(), cli.preset.as_deref())?;
    for s in &cli.set {
        config::apply_set(&mut doc, s)?;
    }
    if let Some(seed) = cli.seed {
        doc.as_object_mut()
            .ok_or_else(|| CliError::validation("config must be a JSON object"))?
            .insert("seed".into(), seed.into());
    }
    let mut runs = config::expand(doc, command)?;
    let workers = match cli.workers {
        Some(0) => return Err(CliError::validation("--workers must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cli.out.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))?;

    let mut failed = 0;
    for run in &mut runs {
        run.command = Some(command);
        let started = Instant::now();
        let emissions = pool.install(|| commands::execute(command, run))?;
        let ctx = output::RunContext {
            out_dir: &cli.out,
            command: command.as_str(),
            config: serde_json::to_value(&*run).map_err(|e| CliError::Io(e.to_string()))?,
            seed: run.seed,
            workers,
            elapsed: started.elapsed(),
        };
        for e in &emissions {
            let path = output::emit(&ctx, e)?;
            let bad = e.failed_points();
            failed += bad;
            if bad > 0 {
                eprintln!("{}: {bad} point(s) failed to converge", path.display());
            } else {
                eprintln!("wrote {}", path.display());
            }
        }
    }
    Ok(failed)
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
    match run(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("numerical failure: {n} point(s) did not converge; see the manifests");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("goldenrate: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
