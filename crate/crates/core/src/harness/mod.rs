//! Experiment harness: configs, problem construction, runs, and output files.

pub mod config;
pub mod experiment;
pub mod output;
pub mod verify;

use rayon::prelude::*;

pub use config::{ExperimentConfig, OperatorChoice, SpectrumTarget};
pub use experiment::{
    build_b_with_spectrum, build_operator, build_problem, rate_only, run_experiment,
    starting_point, ExperimentResult, ReferenceKind,
};
pub use output::{RateSummary, RunSummary, SweepEntry, SweepSummary};

use crate::error::{Error, Result};

/// Configs for each value of the `[sweep]` table, named `{name}_{i}`.
pub fn sweep_configs(cfg: &ExperimentConfig) -> Result<Vec<(usize, f64, ExperimentConfig)>> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config(format!("config {:?} has no [sweep] table", cfg.name)))?;
    Ok(sweep
        .values
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let mut c = cfg.with_spectrum_value(sweep.index, value);
            c.name = format!("{}_{i}", cfg.name);
            (i, value, c)
        })
        .collect())
}

/// Runs every sweep value (in parallel) and writes per-value files plus the aggregate JSON.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    dir: &std::path::Path,
) -> Result<(SweepSummary, std::path::PathBuf)> {
    let configs = sweep_configs(cfg)?;
    let results: Vec<Result<ExperimentResult>> = configs
        .par_iter()
        .map(|(_, _, c)| run_experiment(c))
        .collect();
    let mut runs = Vec::with_capacity(configs.len());
    for ((index, value, c), result) in configs.iter().zip(results) {
        let result = result?;
        let (csv, json) = output::write_run(&result, dir)?;
        runs.push(SweepEntry {
            index: *index,
            value: *value,
            name: c.name.clone(),
            trace_csv: file_name(&csv),
            report_json: file_name(&json),
            report: result.report,
        });
    }
    let summary = SweepSummary {
        config: cfg.clone(),
        runs,
    };
    let path = output::write_sweep(&summary, dir)?;
    Ok((summary, path))
}

fn file_name(path: &std::path::Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
