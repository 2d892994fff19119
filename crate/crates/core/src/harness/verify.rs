//! Invariant suite behind the `verify` subcommand.
//!
//! Each check runs on small seeded instances and reports the worst observed
//! deviation against its tolerance.

use nalgebra::DMatrix;

use super::config::{ExperimentConfig, OperatorChoice, SpectrumTarget};
use super::experiment::{build_problem, matrix_with_spectrum, run_experiment, starting_point};
use crate::analysis::LinearizedMap;
use crate::geometry::{extended_col_projector, extended_row_projector, ProjectorBundle, Side};
use crate::linalg::{self, vec_col};
use crate::random;
use crate::solvers::{kronecker_reduced_run, orthogonal_iteration, StopRule};

pub struct CheckOutcome {
    pub name: &'static str,
    pub result: Result<String, String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.result.is_ok()
    }
}

type Check = fn() -> Result<f64, String>;

const CHECKS: &[(&str, f64, Check)] = &[
    ("projector identities", 1e-12, projector_identities),
    (
        "projector derivatives vs finite differences",
        1e-6,
        projector_derivatives,
    ),
    (
        "curvature vanishes on its subspace",
        1e-12,
        curvature_on_subspace,
    ),
    ("tangent space dimension", 0.0, tangent_dimension),
    (
        "S' acts as identity on the normal space",
        1e-10,
        s_prime_normal_identity,
    ),
    (
        "assembled rate vs curvature-product rate",
        1e-8,
        assembled_vs_product,
    ),
    (
        "assembled rate vs gap ratio (identity)",
        1e-6,
        assembled_vs_gap_ratio,
    ),
    (
        "ALS equals orthogonal iteration",
        1e-10,
        als_vs_orthogonal_iteration,
    ),
    (
        "Kronecker ALS equals reduced block power",
        1e-10,
        kronecker_reduction,
    ),
    ("objective non-increasing", 1e-12, monotone_objective),
    ("seeded runs are deterministic", 0.0, determinism),
];

/// Runs every check; each returns the worst deviation, compared with its tolerance.
pub fn run_suite() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|&(name, tol, check)| {
            let result = match check() {
                Ok(dev) if dev <= tol => Ok(format!("{dev:.3e} <= {tol:.0e}")),
                Ok(dev) => Err(format!("deviation {dev:.3e} exceeds {tol:.0e}")),
                Err(msg) => Err(msg),
            };
            CheckOutcome { name, result }
        })
        .collect()
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gaussian(seed: u64, m: usize, n: usize) -> DMatrix<f64> {
    random::gaussian(&mut random::rng(seed, 0), m, n)
}

fn rank_k(seed: u64, m: usize, n: usize, k: usize) -> DMatrix<f64> {
    gaussian(seed, m, k) * gaussian(seed + 1000, k, n)
}

const SHAPES: [(usize, usize, usize); 3] = [(5, 4, 2), (6, 6, 3), (7, 5, 1)];

fn projector_identities() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (s, &(m, n, k)) in SHAPES.iter().enumerate() {
        let b = ProjectorBundle::at_matrix(&rank_k(s as u64, m, n, k), k).map_err(fail)?;
        let z = gaussian(50 + s as u64, m, n);
        let w = gaussian(60 + s as u64, m, n);
        for side in [Side::Row, Side::Col] {
            let pz = b.project(side, &z);
            worst = worst.max((b.project(side, &pz) - &pz).norm() / z.norm());
            let lhs = linalg::frobenius_inner(&pz, &w);
            let rhs = linalg::frobenius_inner(&z, &b.project(side, &w));
            worst = worst.max((lhs - rhs).abs() / (z.norm() * w.norm()));
        }
        let p12 = b.project_row(&b.project_col(&z));
        let p21 = b.project_col(&b.project_row(&z));
        worst = worst.max((p12 - p21).norm() / z.norm());
        let pt = b.project_tangent(&z);
        worst = worst.max((b.project_tangent(&pt) - &pt).norm() / z.norm());
    }
    Ok(worst)
}

fn projector_derivatives() -> Result<f64, String> {
    let mut worst = 0.0f64;
    let step = 1e-6;
    for t in 0..12u64 {
        let (m, n, k) = SHAPES[t as usize % SHAPES.len()];
        let x = rank_k(100 + t, m, n, k);
        let b = ProjectorBundle::at_matrix(&x, k).map_err(fail)?;
        let h = b.project_tangent(&gaussian(200 + t, m, n));
        let h = &h / h.norm();
        let z = gaussian(300 + t, m, n);
        let (xp, xm) = (&x + &h * step, &x - &h * step);
        let fd1 =
            &z * (extended_row_projector(&xp, k) - extended_row_projector(&xm, k)) / (2.0 * step);
        let fd2 =
            (extended_col_projector(&xp, k) - extended_col_projector(&xm, k)) * &z / (2.0 * step);
        let (d1, d2) = (b.dp1(&h, &z), b.dp2(&h, &z));
        worst = worst
            .max(linalg::rel_diff(&fd1, &d1))
            .max(linalg::rel_diff(&fd2, &d2));
    }
    Ok(worst)
}

fn curvature_on_subspace() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (s, &(m, n, k)) in SHAPES.iter().enumerate() {
        let b = matrix_with_spectrum(m, n, &[3.0, 2.0, 1.0, 0.5][..k + 1], 400 + s as u64)
            .map_err(fail)?;
        let xbar = linalg::truncated_svd(&b, k);
        let bundle = ProjectorBundle::at_matrix(&xbar, k).map_err(fail)?;
        let g = &xbar - &b;
        let z = gaussian(410 + s as u64, m, n);
        for side in [Side::Row, Side::Col] {
            let h = bundle.project(side, &z);
            let nh = bundle
                .curvature_n(&g, &h, side, Default::default())
                .map_err(fail)?;
            worst = worst.max(nh.norm() / (g.norm() * h.norm()));
        }
    }
    Ok(worst)
}

fn tangent_dimension() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (s, &(m, n, k)) in SHAPES[..2].iter().enumerate() {
        let bundle =
            ProjectorBundle::at_matrix(&rank_k(500 + s as u64, m, n, k), k).map_err(fail)?;
        let mut p = DMatrix::zeros(m * n, m * n);
        for j in 0..m * n {
            let mut e = DMatrix::zeros(m, n);
            e[(j % m, j / m)] = 1.0;
            p.column_mut(j)
                .copy_from(&vec_col(&bundle.project_tangent(&e)));
        }
        let rank = linalg::singular_values(&p)
            .iter()
            .filter(|&&s| s > 0.5)
            .count();
        worst = worst.max((rank as f64 - (k * (m + n - k)) as f64).abs());
    }
    Ok(worst)
}

fn small_config(operator: OperatorChoice, n: usize, values: &[f64], seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: "verify".into(),
        seed,
        problem: super::config::ProblemConfig {
            operator,
            m: n,
            n,
            k: 2,
        },
        spectrum: super::config::SpectrumConfig {
            target: if operator == OperatorChoice::Kronecker {
                SpectrumTarget::Reduced
            } else {
                SpectrumTarget::Solution
            },
            values: values.to_vec(),
        },
        solver: StopRule {
            max_sweeps: 400,
            grad_tol: 1e-13,
            stagnation_tol: 0.0,
        },
        output: Default::default(),
        sweep: None,
    }
}

fn s_prime_normal_identity() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (s, op) in [
        OperatorChoice::Identity,
        OperatorChoice::Laplace,
        OperatorChoice::RandomSpd,
    ]
    .into_iter()
    .enumerate()
    {
        let cfg = small_config(op, 5, &[1.0, 0.3, 0.1], 600 + s as u64);
        let problem = build_problem(&cfg).map_err(fail)?;
        let x0 = starting_point(5, 5, 2, cfg.seed).map_err(fail)?;
        let (xbar, _) = super::experiment::reference_point(&problem, &x0).map_err(fail)?;
        let map = LinearizedMap::new(&problem, &xbar).map_err(fail)?;
        let bundle = map.bundle();
        for t in 0..4u64 {
            let h = bundle.project_normal(&gaussian(610 + t, 5, 5));
            let back = bundle.project_normal(&map.apply(&h).map_err(fail)?);
            worst = worst.max((back - &h).norm() / h.norm());
        }
    }
    Ok(worst)
}

fn identity_instance(
    seed: u64,
    n: usize,
    values: &[f64],
) -> Result<(crate::solvers::QuadraticProblem<f64>, DMatrix<f64>), String> {
    let problem =
        build_problem(&small_config(OperatorChoice::Identity, n, values, seed)).map_err(fail)?;
    let xbar = linalg::truncated_svd(problem.rhs(), 2);
    Ok((problem, xbar))
}

fn assembled_vs_product() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (s, tail) in [0.2, 0.5, 0.8].into_iter().enumerate() {
        let (problem, xbar) = identity_instance(700 + s as u64, 6, &[1.0, 0.6, 0.6 * tail, 0.01])?;
        let map = LinearizedMap::new(&problem, &xbar).map_err(fail)?;
        let a = map.rho_assembled().map_err(fail)?;
        let b = map.rho_curvature_product().map_err(fail)?;
        worst = worst.max((a - b).abs() / b);
    }
    Ok(worst)
}

fn assembled_vs_gap_ratio() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (s, s3) in [1e-4, 5e-4, 9e-4].into_iter().enumerate() {
        let (problem, xbar) = identity_instance(710 + s as u64, 8, &[1.0, 1e-3, s3])?;
        let rho = LinearizedMap::new(&problem, &xbar)
            .and_then(|m| m.rho_assembled())
            .map_err(fail)?;
        let expect = (s3 / 1e-3) * (s3 / 1e-3);
        worst = worst.max((rho - expect).abs() / expect);
    }
    Ok(worst)
}

fn als_vs_orthogonal_iteration() -> Result<f64, String> {
    let (problem, _) = identity_instance(800, 20, &[1.0, 0.5, 0.3, 0.2, 0.1])?;
    let x0 = starting_point(20, 20, 2, 801).map_err(fail)?;
    let als = problem.als_sequence(&x0, 30).map_err(fail)?;
    let power = orthogonal_iteration(problem.rhs(), 2, x0.v(), 30).map_err(fail)?;
    Ok(als[1..]
        .iter()
        .zip(&power)
        .map(|(a, p)| linalg::rel_diff(&a.to_matrix(), &p.to_matrix()))
        .fold(0.0, f64::max))
}

fn kronecker_reduction() -> Result<f64, String> {
    let cfg = small_config(OperatorChoice::Kronecker, 8, &[1.0, 0.5, 0.3, 0.2], 900);
    let problem = build_problem(&cfg).map_err(fail)?;
    let (a1, a2) = match problem.op().kind() {
        crate::operators::OperatorKind::Kronecker { a1, a2 } => (a1, a2),
        _ => return Err("expected a Kronecker operator".into()),
    };
    let x0 = starting_point(8, 8, 2, 901).map_err(fail)?;
    let als = problem.als_sequence(&x0, 20).map_err(fail)?;
    let reduced = kronecker_reduced_run(a1, a2, problem.rhs(), 2, &x0, 20).map_err(fail)?;
    Ok(als[1..]
        .iter()
        .zip(&reduced)
        .map(|(a, r)| linalg::rel_diff(&a.to_matrix(), r))
        .fold(0.0, f64::max))
}

fn monotone_objective() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (s, op) in [
        OperatorChoice::Identity,
        OperatorChoice::Kronecker,
        OperatorChoice::Laplace,
        OperatorChoice::RandomSpd,
    ]
    .into_iter()
    .enumerate()
    {
        let mut cfg = small_config(op, 6, &[1.0, 0.1, 0.05, 0.01], 1000 + s as u64);
        cfg.solver.max_sweeps = 60;
        let problem = build_problem(&cfg).map_err(fail)?;
        let x0 = starting_point(6, 6, 2, cfg.seed).map_err(fail)?;
        let outcome = problem.als_run(&x0, &cfg.solver, None).map_err(fail)?;
        for w in outcome.trace.records.windows(2) {
            worst = worst.max(w[1].objective - w[0].objective);
        }
    }
    Ok(worst)
}

fn determinism() -> Result<f64, String> {
    let cfg = small_config(OperatorChoice::Laplace, 6, &[1.0, 1e-3, 5e-4], 1100);
    let a = run_experiment(&cfg).map_err(fail)?;
    let b = run_experiment(&cfg).map_err(fail)?;
    let same = super::output::trace_csv(&a) == super::output::trace_csv(&b)
        && super::output::to_json(&super::output::run_summary(&a)).map_err(fail)?
            == super::output::to_json(&super::output::run_summary(&b)).map_err(fail)?;
    let (p1, p2) = (
        build_problem(&cfg).map_err(fail)?,
        build_problem(&cfg).map_err(fail)?,
    );
    let same_rhs = p1.rhs() == p2.rhs();
    Ok(if same && same_rhs { 0.0 } else { 1.0 })
}
