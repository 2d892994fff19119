//! Problem construction and experiment runs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OperatorChoice, SpectrumTarget};
use crate::analysis::{self, RateReport, SlopeFit};
use crate::error::{Error, Result};
use crate::geometry::LowRankState;
use crate::linalg::{self, spd_sqrt_pair};
use crate::operators::{random_spd_on_stream, HessianOperator, OperatorKind};
use crate::random::{self, stream};
use crate::solvers::{kronecker_minimizer, IterationTrace, QuadraticProblem, StopReason, StopRule};

/// Sweep cap for the tight reference run in general-SPD experiments.
pub const REFERENCE_MAX_SWEEPS: usize = 20_000;
/// Projected-gradient tolerance of the reference run.
pub const REFERENCE_GRAD_TOL: f64 = 1e-12;
/// Extra sweeps allowed while polishing the reference limit.
const POLISH_MAX_SWEEPS: usize = 500;
/// Polishing stops after this many sweeps without a smaller step.
const POLISH_STALL: usize = 5;

/// How the reference point `Xbar` of an experiment was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Truncated SVD of `B`.
    TruncatedSvd,
    /// `A1^{-1/2} trunc_k(C) A2^{-1/2}`.
    KroneckerClosedForm,
    /// Limit of a tight ALS run from the experiment's starting point.
    AlsLimit,
}

/// Operator for a config; random factors come from `seed`.
pub fn build_operator(cfg: &ExperimentConfig) -> Result<HessianOperator<f64>> {
    let p = &cfg.problem;
    match p.operator {
        OperatorChoice::Identity => HessianOperator::identity(p.m, p.n),
        OperatorChoice::Kronecker => HessianOperator::kronecker(
            random_spd_on_stream(p.m, cfg.seed, stream::OPERATOR),
            random_spd_on_stream(p.n, cfg.seed, stream::OPERATOR_SECOND),
        ),
        OperatorChoice::Laplace => HessianOperator::laplace_2d(p.n),
        OperatorChoice::RandomSpd => HessianOperator::dense_spd(
            p.m,
            p.n,
            random_spd_on_stream(p.m * p.n, cfg.seed, stream::OPERATOR),
        ),
    }
}

/// `Q1 diag(spectrum) Q2^T` with seeded random orthonormal `Q1`, `Q2`.
pub fn matrix_with_spectrum(
    m: usize,
    n: usize,
    spectrum: &[f64],
    seed: u64,
) -> Result<DMatrix<f64>> {
    let r = spectrum.len();
    if r > m.min(n) {
        return Err(Error::Invalid(format!(
            "spectrum of length {r} does not fit a {m}x{n} matrix"
        )));
    }
    let mut rng = random::rng(seed, stream::RHS);
    let q1 = random::orthonormal::<f64>(&mut rng, m, r);
    let q2 = random::orthonormal::<f64>(&mut rng, n, r);
    Ok(q1 * DMatrix::from_diagonal(&DVector::from_column_slice(spectrum)) * q2.transpose())
}

/// Right-hand side whose target matrix has the prescribed singular values.
///
/// `Rhs` prescribes `sigma(B)`, `Solution` prescribes `sigma(A^{-1}[B])` via
/// `B = A[Y]`, and `Reduced` prescribes `sigma(A1^{-1/2} B A2^{-1/2})` via
/// `B = A1^{1/2} Y A2^{1/2}`.
pub fn build_b_with_spectrum(
    op: &HessianOperator<f64>,
    spectrum: &[f64],
    target: SpectrumTarget,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let (m, n) = op.shape();
    let y = matrix_with_spectrum(m, n, spectrum, seed)?;
    match target {
        SpectrumTarget::Rhs => Ok(y),
        SpectrumTarget::Solution => op.apply(&y),
        SpectrumTarget::Reduced => match op.kind() {
            OperatorKind::Kronecker { a1, a2 } => {
                let (a1_sqrt, _) = spd_sqrt_pair(a1, "Kronecker factor A1")?;
                let (a2_sqrt, _) = spd_sqrt_pair(a2, "Kronecker factor A2")?;
                Ok(a1_sqrt * y * a2_sqrt)
            }
            _ => Err(Error::Unsupported {
                context: "reduced spectrum target",
                kind: op.kind_name(),
            }),
        },
    }
}

/// Random rank-`k` start `U0 V0^T` with orthonormal Gaussian factors.
pub fn starting_point(m: usize, n: usize, k: usize, seed: u64) -> Result<LowRankState<f64>> {
    let mut rng = random::rng(seed, stream::START);
    let u = random::orthonormal::<f64>(&mut rng, m, k);
    let v = random::orthonormal::<f64>(&mut rng, n, k);
    LowRankState::new(u, DMatrix::identity(k, k), v)
}

/// Operator, right-hand side and rank for a config.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<QuadraticProblem<f64>> {
    let op = build_operator(cfg)?;
    let b = build_b_with_spectrum(&op, &cfg.spectrum.values, cfg.spectrum.target, cfg.seed)?;
    QuadraticProblem::new(op, b, cfg.problem.k)
}

/// Limit of ALS from `x0`: a tight run followed by polishing sweeps until the
/// step size stops decreasing or reaches rounding level.
pub fn als_limit(problem: &QuadraticProblem<f64>, x0: &LowRankState<f64>) -> Result<DMatrix<f64>> {
    let tight = StopRule {
        max_sweeps: REFERENCE_MAX_SWEEPS,
        grad_tol: REFERENCE_GRAD_TOL,
        stagnation_tol: 0.0,
    };
    let mut state = problem.als_run(x0, &tight, None)?.state;
    let mut x = state.to_matrix();
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    for _ in 0..POLISH_MAX_SWEEPS {
        let next = problem.als_sweep(&state)?;
        let x_next = next.to_matrix();
        let step = (&x_next - &x).norm();
        state = next;
        x = x_next;
        if step <= 2.0 * f64::EPSILON * x.norm() {
            break;
        }
        if step < best {
            best = step;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= POLISH_STALL {
                break;
            }
        }
    }
    Ok(x)
}

/// Reference point `Xbar` used for relative errors and the rate analysis.
pub fn reference_point(
    problem: &QuadraticProblem<f64>,
    x0: &LowRankState<f64>,
) -> Result<(DMatrix<f64>, ReferenceKind)> {
    let k = problem.rank();
    match problem.op().kind() {
        OperatorKind::Identity => Ok((
            linalg::truncated_svd(problem.rhs(), k),
            ReferenceKind::TruncatedSvd,
        )),
        OperatorKind::Kronecker { a1, a2 } => Ok((
            kronecker_minimizer(a1, a2, problem.rhs(), k)?,
            ReferenceKind::KroneckerClosedForm,
        )),
        _ => Ok((als_limit(problem, x0)?, ReferenceKind::AlsLimit)),
    }
}

/// Everything produced by one `run`.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub trace: IterationTrace,
    pub rel_errors: Vec<f64>,
    pub rel_residuals: Vec<f64>,
    pub stop_reason: StopReason,
    pub reference: ReferenceKind,
    pub xbar_norm: f64,
    pub report: RateReport,
}

impl ExperimentResult {
    pub fn sweeps(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }

    pub fn final_rel_error(&self) -> f64 {
        self.rel_errors.last().copied().unwrap_or(f64::NAN)
    }
}

/// Slope fit that tolerates traces too short to fit (e.g. one-sweep convergence).
fn try_slope(rel_errors: &[f64]) -> Result<Option<SlopeFit>> {
    match analysis::observed_slope(rel_errors, None) {
        Ok(fit) => Ok(Some(fit)),
        Err(Error::InsufficientData { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn rate_report(
    problem: &QuadraticProblem<f64>,
    xbar: &DMatrix<f64>,
    fit: Option<SlopeFit>,
) -> Result<RateReport> {
    let map = analysis::LinearizedMap::new(problem, xbar)?;
    let rho = map.rho_assembled()?;
    let theoretical = analysis::theoretical_rate(problem)?;
    let product = match problem.op().kind() {
        OperatorKind::Identity | OperatorKind::Kronecker { .. } => {
            Some(map.rho_curvature_product()?)
        }
        _ => None,
    };
    Ok(RateReport::new(
        rho,
        theoretical,
        product,
        fit,
        map.is_zero_gradient(),
    ))
}

/// Builds the problem, computes `Xbar`, runs ALS and the rate analysis.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let ctx = |e: Error| e.context(format!("experiment {:?}", cfg.name));
    cfg.validate().map_err(ctx)?;
    let problem = build_problem(cfg).map_err(ctx)?;
    let (m, n) = problem.shape();
    let x0 = starting_point(m, n, cfg.problem.k, cfg.seed).map_err(ctx)?;
    let (xbar, reference) = reference_point(&problem, &x0).map_err(ctx)?;
    let outcome = problem
        .als_run(&x0, &cfg.solver, Some(&xbar))
        .map_err(ctx)?;
    let xbar_norm = xbar.norm();
    let rel_errors = outcome
        .trace
        .relative_errors(xbar_norm)
        .expect("reference recorded for every sweep");
    let rel_residuals = outcome.trace.relative_projected_residuals();
    let fit = try_slope(&rel_errors).map_err(ctx)?;
    let report = rate_report(&problem, &xbar, fit).map_err(ctx)?;
    Ok(ExperimentResult {
        config: cfg.clone(),
        trace: outcome.trace,
        rel_errors,
        rel_residuals,
        stop_reason: outcome.stop_reason,
        reference,
        xbar_norm,
        report,
    })
}

/// Rate analysis only: no measured run, so no observed slope.
pub fn rate_only(cfg: &ExperimentConfig) -> Result<(RateReport, ReferenceKind)> {
    let ctx = |e: Error| e.context(format!("experiment {:?}", cfg.name));
    cfg.validate().map_err(ctx)?;
    let problem = build_problem(cfg).map_err(ctx)?;
    let (m, n) = problem.shape();
    let x0 = starting_point(m, n, cfg.problem.k, cfg.seed).map_err(ctx)?;
    let (xbar, reference) = reference_point(&problem, &x0).map_err(ctx)?;
    Ok((rate_report(&problem, &xbar, None).map_err(ctx)?, reference))
}
