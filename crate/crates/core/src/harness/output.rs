//! CSV traces and JSON reports.
//!
//! Files are written without timestamps or host data so that identical
//! configs produce byte-identical outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{ExperimentResult, ReferenceKind};
use crate::analysis::RateReport;
use crate::error::Result;
use crate::solvers::StopReason;

pub const CSV_HEADER: &str = "sweep,rel_error,rel_projected_residual";

/// JSON written next to each trace CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub trace_csv: String,
    pub reference: ReferenceKind,
    pub stop_reason: StopReason,
    pub sweeps: usize,
    pub final_rel_error: f64,
    pub final_rel_projected_residual: f64,
    pub report: RateReport,
}

/// JSON written by the `rate` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub config: ExperimentConfig,
    pub reference: ReferenceKind,
    pub report: RateReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub index: usize,
    pub value: f64,
    pub name: String,
    pub trace_csv: String,
    pub report_json: String,
    pub report: RateReport,
}

/// Aggregate JSON written by the `sweep` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config: ExperimentConfig,
    pub runs: Vec<SweepEntry>,
}

/// Per-sweep CSV with 17 significant digits.
pub fn trace_csv(result: &ExperimentResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for ((rec, err), res) in result
        .trace
        .records
        .iter()
        .zip(&result.rel_errors)
        .zip(&result.rel_residuals)
    {
        writeln!(out, "{},{:.16e},{:.16e}", rec.sweep, err, res).expect("write to string");
    }
    out
}

pub fn run_summary(result: &ExperimentResult) -> RunSummary {
    RunSummary {
        config: result.config.clone(),
        trace_csv: format!("{}.csv", result.config.name),
        reference: result.reference,
        stop_reason: result.stop_reason,
        sweeps: result.sweeps(),
        final_rel_error: result.final_rel_error(),
        final_rel_projected_residual: result.rel_residuals.last().copied().unwrap_or(f64::NAN),
        report: result.report.clone(),
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Writes `{name}.csv` and `{name}.json` into `dir`.
pub fn write_run(result: &ExperimentResult, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let name = &result.config.name;
    let csv = dir.join(format!("{name}.csv"));
    let json = dir.join(format!("{name}.json"));
    write(&csv, &trace_csv(result))?;
    write(&json, &to_json(&run_summary(result))?)?;
    Ok((csv, json))
}

/// Writes `{name}_rate.json` into `dir`.
pub fn write_rate(summary: &RateSummary, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(format!("{}_rate.json", summary.config.name));
    write(&path, &to_json(summary)?)?;
    Ok(path)
}

/// Writes `{name}_sweep.json` into `dir`.
pub fn write_sweep(summary: &SweepSummary, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(format!("{}_sweep.json", summary.config.name));
    write(&path, &to_json(summary)?)?;
    Ok(path)
}
