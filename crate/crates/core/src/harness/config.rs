//! Experiment configuration files (TOML or JSON).
//!
//! ```toml
//! name = "identity_s3_1e-4"
//! seed = 1
//!
//! [problem]
//! operator = "identity"   # identity | kronecker | laplace | random_spd
//! m = 50
//! n = 50
//! k = 2
//!
//! [spectrum]
//! target = "rhs"          # rhs | solution | reduced
//! values = [1.0, 1e-3, 1e-4]
//!
//! [solver]
//! max_sweeps = 500
//! grad_tol = 1e-13
//!
//! [sweep]                 # only for the `sweep` subcommand
//! index = 2
//! values = [1e-4, 5e-4, 9e-4]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::DENSE_CAP;
use crate::solvers::StopRule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorChoice {
    Identity,
    /// `A2 ⊗ A1` with random SPD factors `A1 = R1^T R1`, `A2 = R2^T R2`.
    Kronecker,
    /// Five-point Laplacian on an `n x n` grid (`m = n`).
    Laplace,
    /// Dense `R^T R` on `R^{mn}`.
    RandomSpd,
}

/// What the prescribed singular values describe.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumTarget {
    /// `B` itself.
    Rhs,
    /// The unconstrained minimizer `Y = A^{-1}[B]`, so `B = A[Y]`.
    #[default]
    Solution,
    /// `C = A1^{-1/2} B A2^{-1/2}` (Kronecker operators only).
    Reduced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub operator: OperatorChoice,
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default)]
    pub target: SpectrumTarget,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

/// Replaces `spectrum.values[index]` by each entry of `values` in turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub index: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub solver: StopRule,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

pub const DEFAULT_OUT_DIR: &str = "results";

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads and validates a config; `.json` files are parsed as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let is_json = path
            .extension()
            .is_some_and(|ext| ext.eq_ignore_ascii_case("json"));
        let cfg = if is_json {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        };
        let cfg = cfg.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let ProblemConfig { operator, m, n, k } = self.problem;
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return bad(format!(
                "name {:?} must be non-empty and use only [A-Za-z0-9._-]",
                self.name
            ));
        }
        if m == 0 || n == 0 {
            return bad(format!("problem size {m}x{n} is empty"));
        }
        if k == 0 || k > m.min(n) {
            return bad(format!("rank k = {k} must lie in 1..={}", m.min(n)));
        }
        if m * n > DENSE_CAP {
            return bad(format!("m*n = {} exceeds the dense cap {DENSE_CAP}", m * n));
        }
        if operator == OperatorChoice::Laplace && m != n {
            return bad(format!("laplace operator needs a square grid, got {m}x{n}"));
        }
        if self.spectrum.target == SpectrumTarget::Reduced && operator != OperatorChoice::Kronecker
        {
            return bad("spectrum target \"reduced\" requires the kronecker operator".into());
        }
        if self.solver.max_sweeps == 0 {
            return bad("solver.max_sweeps must be positive".into());
        }
        if !(self.solver.grad_tol >= 0.0) || !(self.solver.stagnation_tol >= 0.0) {
            return bad("solver tolerances must be non-negative".into());
        }
        check_spectrum(&self.spectrum.values, m.min(n), k)?;
        if let Some(sweep) = &self.sweep {
            if sweep.index >= self.spectrum.values.len() {
                return bad(format!(
                    "sweep.index {} outside spectrum of length {}",
                    sweep.index,
                    self.spectrum.values.len()
                ));
            }
            if sweep.values.is_empty() {
                return bad("sweep.values is empty".into());
            }
            for &v in &sweep.values {
                check_spectrum(
                    &self.with_spectrum_value(sweep.index, v).spectrum.values,
                    m.min(n),
                    k,
                )?;
            }
        }
        Ok(())
    }

    /// Copy with `spectrum.values[index] = value`, named `{name}_{position}`
    /// by the caller when needed.
    pub fn with_spectrum_value(&self, index: usize, value: f64) -> Self {
        let mut cfg = self.clone();
        cfg.spectrum.values[index] = value;
        cfg.sweep = None;
        cfg
    }
}

/// Singular values must be finite, non-negative, non-increasing, at most
/// `max_len` long, and have a positive `k`-th entry.
pub fn check_spectrum(values: &[f64], max_len: usize, k: usize) -> Result<()> {
    let bad = |msg: String| Err(Error::Config(msg));
    if values.len() > max_len {
        return bad(format!(
            "spectrum has {} values but min(m, n) = {max_len}",
            values.len()
        ));
    }
    if values.len() < k {
        return bad(format!(
            "spectrum needs at least k = {k} values, got {}",
            values.len()
        ));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return bad("spectrum values must be finite and non-negative".into());
    }
    if values.windows(2).any(|w| w[1] > w[0]) {
        return bad(format!("spectrum must be non-increasing: {values:?}"));
    }
    if values[k - 1] <= 0.0 {
        return bad(format!("sigma_k = {} must be positive", values[k - 1]));
    }
    Ok(())
}
