//! CSV tables and their JSON run manifests.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

pub const TOOL: &str = "goldenrate";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const UNITS: &str = "hbar = omega_c = k_B = 1: energies in hbar*omega_c, times in 1/omega_c, \
rates in omega_c; theta = hbar*omega_c/(k_B*T)";

/// Shortest decimal representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        if x.is_sign_negative() { "-0".into() } else { "0".into() }
    } else if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if (1e-5..1e16).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// A table cell.
pub enum Cell {
    Num(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: Vec<&'static str>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_path(path)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| match c {
                Cell::Num(x) => fmt_f64(*x),
                Cell::Text(s) => s.clone(),
            }))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub units: &'static str,
    pub data_file: String,
    pub columns: &'a [&'static str],
    pub rows: usize,
    pub config: Value,
    pub seed: u64,
    pub workers: usize,
    pub wall_time_s: f64,
    /// Per-row convergence status, in row order.
    pub statuses: Vec<String>,
    pub failed_points: usize,
    pub notes: Vec<String>,
}

/// Everything needed to emit one table plus its manifest.
pub struct Emission {
    pub stem: String,
    pub table: Table,
    pub statuses: Vec<String>,
    pub notes: Vec<String>,
}

impl Emission {
    pub fn failed_points(&self) -> usize {
        self.statuses.iter().filter(|s| !is_ok_status(s)).count()
    }
}

pub fn is_ok_status(s: &str) -> bool {
    matches!(s, "ok" | "warning" | "converged" | "tail_dominated")
}

pub struct RunContext<'a> {
    pub out_dir: &'a Path,
    pub command: &'a str,
    pub config: Value,
    pub seed: u64,
    pub workers: usize,
    pub elapsed: Duration,
}

/// Write `<stem>.csv` and `<stem>.manifest.json`; returns the CSV path.
pub fn emit(ctx: &RunContext<'_>, e: &Emission) -> Result<PathBuf, CliError> {
    let csv_path = ctx.out_dir.join(format!("{}.csv", e.stem));
    e.table.write(&csv_path)?;
    let manifest = Manifest {
        tool: TOOL,
        version: VERSION,
        command: ctx.command,
        units: UNITS,
        data_file: format!("{}.csv", e.stem),
        columns: &e.table.header,
        rows: e.table.rows.len(),
        config: ctx.config.clone(),
        seed: ctx.seed,
        workers: ctx.workers,
        wall_time_s: ctx.elapsed.as_secs_f64(),
        statuses: e.statuses.clone(),
        failed_points: e.failed_points(),
        notes: e.notes.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    let m_path = ctx.out_dir.join(format!("{}.manifest.json", e.stem));
    std::fs::write(&m_path, text + "\n")
        .map_err(|err| CliError::Io(format!("cannot write {}: {err}", m_path.display())))?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-20, -2.5e300, 123456.789, 5e-324, 1e16, 0.00001] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(fmt_f64(0.0), "0");
        assert_eq!(fmt_f64(2.0), "2");
        assert_eq!(fmt_f64(1e-20), "1e-20");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn statuses() {
        assert!(is_ok_status("converged"));
        assert!(is_ok_status("tail_dominated"));
        assert!(!is_ok_status("cap_reached"));
    }
}
