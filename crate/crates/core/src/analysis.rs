//! Local convergence analysis at a fixed point of ALS.
//!
//! At a critical point `Xbar` the linearized sweep is
//!
//! ```text
//! S'(Xbar) = [(I - P2^A) - B2 N2] [(I - P1^A) - B1 N1]
//! ```
//!
//! where `Bi = (Pi A Pi)^{-1}` on `Ti(Xbar)`, `Pi^A = Bi Pi A` is the
//! A-orthogonal projector onto `Ti(Xbar)`, and `Ni` are the curvature maps of
//! [`crate::geometry`]. The `Bi` solves use the same restricted SPD systems as
//! the ALS half-steps.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::geometry::{ProjectorBundle, Side, CRITICAL_TOL};
use crate::linalg::{self, spd_sqrt_pair, unvec, vec_col};
use crate::operators::{OperatorKind, DENSE_CAP};
use crate::scalar::Scalar;
use crate::solvers::QuadraticProblem;

/// Gradients with `|grad f(Xbar)| <= ZERO_GRADIENT_TOL |B|` are treated as zero
/// (the critical-point check is skipped because the residual is rounding noise).
pub const ZERO_GRADIENT_TOL: f64 = 1e-10;

/// Gap below which `sigma_k` and `sigma_{k+1}` are considered equal.
pub const GAP_TOL: f64 = 1e-12;

/// Linearization of the ALS sweep at a fixed point.
pub struct LinearizedMap<'a, T: Scalar> {
    problem: &'a QuadraticProblem<T>,
    bundle: ProjectorBundle<T>,
    grad: DMatrix<T>,
    zero_gradient: bool,
    row_solver: Cholesky<T, Dyn>,
    col_solver: Cholesky<T, Dyn>,
}

impl<'a, T: Scalar> LinearizedMap<'a, T> {
    pub fn new(problem: &'a QuadraticProblem<T>, xbar: &DMatrix<T>) -> Result<Self> {
        Self::with_tolerance(problem, xbar, CRITICAL_TOL)
    }

    pub fn with_tolerance(
        problem: &'a QuadraticProblem<T>,
        xbar: &DMatrix<T>,
        critical_tol: f64,
    ) -> Result<Self> {
        check_shape("fixed point", problem.shape(), xbar.shape())?;
        let bundle = ProjectorBundle::at_matrix(xbar, problem.rank())?;
        let grad = problem.gradient(xbar)?;
        let zero_gradient = grad.norm() <= T::lit(ZERO_GRADIENT_TOL) * problem.rhs().norm();
        if !zero_gradient {
            bundle.check_critical(&grad, critical_tol)?;
        }
        let row_solver = linalg::cholesky(
            problem.op().row_system(bundle.v())?,
            "restricted system on T1",
        )?;
        let col_solver = linalg::cholesky(
            problem.op().col_system(bundle.u())?,
            "restricted system on T2",
        )?;
        Ok(LinearizedMap {
            problem,
            bundle,
            grad,
            zero_gradient,
            row_solver,
            col_solver,
        })
    }

    pub fn bundle(&self) -> &ProjectorBundle<T> {
        &self.bundle
    }

    pub fn gradient(&self) -> &DMatrix<T> {
        &self.grad
    }

    pub fn is_zero_gradient(&self) -> bool {
        self.zero_gradient
    }

    fn shape(&self) -> (usize, usize) {
        self.problem.shape()
    }

    /// `Bi = (Pi A Pi)^{-1}` applied to `Pi[y]`.
    pub fn restricted_inverse(&self, side: Side, y: &DMatrix<T>) -> DMatrix<T> {
        let (m, n) = self.shape();
        let k = self.bundle.rank();
        match side {
            Side::Row => {
                let v = self.bundle.v();
                let coords = self.row_solver.solve(&vec_col(&(y * v)));
                unvec(coords.as_slice(), m, k) * v.transpose()
            }
            Side::Col => {
                let u = self.bundle.u();
                let coords = self.col_solver.solve(&vec_col(&(u.transpose() * y)));
                u * unvec(coords.as_slice(), k, n)
            }
        }
    }

    /// Curvature map `Ni[H]`, with `H` projected onto `T(Xbar)`.
    pub fn curvature(&self, side: Side, h: &DMatrix<T>) -> DMatrix<T> {
        self.bundle
            .curvature_unchecked(&self.grad, &self.bundle.project_tangent(h), side)
    }

    /// A-orthogonal projector `Pi^A[H] = Bi Pi A[H]`.
    pub fn a_projector(&self, side: Side, h: &DMatrix<T>) -> DMatrix<T> {
        self.restricted_inverse(side, &self.problem.op().apply_unchecked(h))
    }

    /// `Si'(Xbar)[H] = H - Bi (Pi A[H] + Ni[H])`.
    pub fn apply_half(&self, side: Side, h: &DMatrix<T>) -> DMatrix<T> {
        let ah = self.problem.op().apply_unchecked(h);
        h - self.restricted_inverse(side, &(ah + self.curvature(side, h)))
    }

    /// `S'(Xbar)[H] = S2'(S1'(H))`.
    pub fn apply(&self, h: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_shape("S' direction", self.shape(), h.shape())?;
        Ok(self.apply_half(Side::Col, &self.apply_half(Side::Row, h)))
    }

    /// `B2 N2 B1 N1 P[H]`.
    pub fn apply_curvature_product(&self, h: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_shape("curvature product direction", self.shape(), h.shape())?;
        let first = self.restricted_inverse(Side::Row, &self.curvature(Side::Row, h));
        Ok(self.restricted_inverse(Side::Col, &self.curvature(Side::Col, &first)))
    }

    fn assemble_with<F>(&self, f: F) -> Result<DMatrix<T>>
    where
        F: Fn(&DMatrix<T>) -> DMatrix<T> + Sync,
    {
        let (m, n) = self.shape();
        let dim = m * n;
        if dim > DENSE_CAP {
            return Err(Error::Capacity {
                size: dim,
                cap: DENSE_CAP,
            });
        }
        let columns: Vec<DMatrix<T>> = (0..dim)
            .into_par_iter()
            .map(|j| {
                let mut e = DMatrix::zeros(m, n);
                e[(j % m, j / m)] = T::one();
                f(&e)
            })
            .collect();
        let mut out = DMatrix::zeros(dim, dim);
        for (j, col) in columns.iter().enumerate() {
            out.column_mut(j).copy_from_slice(col.as_slice());
        }
        Ok(out)
    }

    /// Matrix of `S'(Xbar)`; column `j` is `vec(S'[unvec(e_j)])`.
    pub fn assemble(&self) -> Result<DMatrix<T>> {
        self.assemble_with(|e| self.apply_half(Side::Col, &self.apply_half(Side::Row, e)))
    }

    /// Matrix of `B2 N2 B1 N1 P`.
    pub fn assemble_curvature_product(&self) -> Result<DMatrix<T>> {
        self.assemble_with(|e| {
            let first = self.restricted_inverse(Side::Row, &self.curvature(Side::Row, e));
            self.restricted_inverse(Side::Col, &self.curvature(Side::Col, &first))
        })
    }

    /// Matrix of the orthogonal projector `P(Xbar)`.
    pub fn assemble_tangent_projector(&self) -> DMatrix<T> {
        let q = self.bundle.tangent_basis();
        &q * q.transpose()
    }

    /// `Q^T M Q` for an orthonormal basis `Q` of `T(Xbar)`.
    ///
    /// When `T(Xbar)` is invariant under `M` and `M (I - P) = 0` (true for
    /// `S' P` and for `B2 N2 B1 N1 P`), the nonzero spectrum of `M` is that of
    /// this `k(m+n-k)`-dimensional compression.
    pub fn compress_to_tangent(&self, assembled: &DMatrix<T>) -> DMatrix<T> {
        let q = self.bundle.tangent_basis();
        q.transpose() * (assembled * &q)
    }

    /// `rho(S'(Xbar) P)` from the assembled `S'` restricted to `T(Xbar)`.
    pub fn rho_assembled(&self) -> Result<T> {
        spectral_radius(&self.compress_to_tangent(&self.assemble()?))
    }

    /// `rho(S'(Xbar) P)` by a full `mn x mn` eigensolve of the assembled product.
    pub fn rho_assembled_full(&self) -> Result<T> {
        let s = self.assemble()?;
        spectral_radius(&(s * self.assemble_tangent_projector()))
    }

    /// `rho(B2 N2 B1 N1 P)`; only valid when the A-orthogonal projectors
    /// commute and `Ni = 0` on `Ti`, i.e. identity and Kronecker Hessians.
    pub fn rho_curvature_product(&self) -> Result<T> {
        match self.problem.op().kind() {
            OperatorKind::Identity | OperatorKind::Kronecker { .. } => {}
            _ => {
                return Err(Error::Unsupported {
                    context: "curvature-product rate",
                    kind: self.problem.op().kind_name(),
                })
            }
        }
        spectral_radius(&self.compress_to_tangent(&self.assemble_curvature_product()?))
    }
}

/// `S'(Xbar)[H]` for a single direction.
pub fn apply_s_prime<T: Scalar>(
    problem: &QuadraticProblem<T>,
    xbar: &DMatrix<T>,
    h: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    LinearizedMap::new(problem, xbar)?.apply(h)
}

/// Dense `mn x mn` matrix of `S'(Xbar)`.
pub fn assemble_s_prime<T: Scalar>(
    problem: &QuadraticProblem<T>,
    xbar: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    LinearizedMap::new(problem, xbar)?.assemble()
}

/// `rho(B2 N2 B1 N1 P)` at `xbar`.
pub fn rho_via_curvature_product<T: Scalar>(
    problem: &QuadraticProblem<T>,
    xbar: &DMatrix<T>,
) -> Result<T> {
    LinearizedMap::new(problem, xbar)?.rho_curvature_product()
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius<T: Scalar>(m: &DMatrix<T>) -> Result<T> {
    let mut rho = 0.0f64;
    for (re, im) in linalg::eigenvalues(m)? {
        let modulus = re.hypot(im);
        if !modulus.is_finite() {
            return Err(Error::Eigensolver(m.nrows()));
        }
        rho = rho.max(modulus);
    }
    Ok(T::lit(rho))
}

/// Closed-form asymptotic rate `(sigma_{k+1} / sigma_k)^2` for identity
/// Hessians (singular values of `B`) and Kronecker Hessians (singular values
/// of `A1^{-1/2} B A2^{-1/2}`); `None` for other kinds.
pub fn theoretical_rate<T: Scalar>(problem: &QuadraticProblem<T>) -> Result<Option<T>> {
    let sigma = match problem.op().kind() {
        OperatorKind::Identity => linalg::singular_values(problem.rhs()),
        OperatorKind::Kronecker { a1, a2 } => {
            let (_, a1_isqrt) = spd_sqrt_pair(a1, "Kronecker factor A1")?;
            let (_, a2_isqrt) = spd_sqrt_pair(a2, "Kronecker factor A2")?;
            linalg::singular_values(&(a1_isqrt * problem.rhs() * a2_isqrt))
        }
        _ => return Ok(None),
    };
    gap_ratio_squared(&sigma, problem.rank()).map(Some)
}

/// `(sigma_{k+1} / sigma_k)^2` from descending singular values.
pub fn gap_ratio_squared<T: Scalar>(sigma: &[T], k: usize) -> Result<T> {
    let first = sigma.first().copied().unwrap_or_else(T::zero);
    let sk = sigma
        .get(k.wrapping_sub(1))
        .copied()
        .unwrap_or_else(T::zero);
    let next = sigma.get(k).copied().unwrap_or_else(T::zero);
    // sigma_{k+1} at rounding level counts as an exact zero.
    let zero_level = T::machine_eps() * first * T::count(sigma.len().max(1));
    if next <= zero_level {
        if sk > zero_level {
            return Ok(T::zero());
        }
        return Err(Error::GapNotSeparated {
            sigma_k: sk.as_f64(),
            sigma_next: next.as_f64(),
        });
    }
    if sk - next <= T::lit(GAP_TOL) * sk {
        return Err(Error::GapNotSeparated {
            sigma_k: sk.as_f64(),
            sigma_next: next.as_f64(),
        });
    }
    let r = next / sk;
    Ok(r * r)
}

/// Least-squares fit of `log err_l` against `l`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// Per-sweep contraction factor `exp(slope)`.
    pub factor: f64,
    /// Half-open sweep range `[start, end)` used for the fit.
    pub window: (usize, usize),
}

/// Minimum number of points in a slope fit.
pub const MIN_FIT_POINTS: usize = 4;

/// Rounding floor for relative errors, `100 eps`.
pub fn saturation_floor() -> f64 {
    100.0 * f64::EPSILON
}

/// A trailing point more than this factor above the fitted line is treated as
/// the onset of a rounding floor and dropped from an automatic window.
pub const TAIL_OUTLIER_FACTOR: f64 = 2.0;

/// Fits the per-sweep contraction factor of a relative-error sequence.
///
/// Without an explicit window, the fit uses the last half (at least
/// [`MIN_FIT_POINTS`]) of the sweeps preceding the first error at or below
/// [`saturation_floor`]. Rounding floors above that level (ill-conditioned
/// Hessians) are detected by dropping trailing points that lie more than
/// [`TAIL_OUTLIER_FACTOR`] above the line through the points before them.
pub fn observed_slope(rel_errors: &[f64], window: Option<(usize, usize)>) -> Result<SlopeFit> {
    let floor = saturation_floor();
    let usable = |i: usize| rel_errors[i] > floor && rel_errors[i].is_finite();
    if let Some((s, e)) = window {
        if e > rel_errors.len() || s >= e {
            return Err(Error::Invalid(format!(
                "fit window [{s}, {e}) outside trace of length {}",
                rel_errors.len()
            )));
        }
        let (factor, _) =
            fit_log_linear(rel_errors, (s..e).filter(|&i| usable(i)), MIN_FIT_POINTS)?;
        return Ok(SlopeFit {
            factor,
            window: (s, e),
        });
    }
    let mut end = (0..rel_errors.len())
        .find(|&i| !usable(i))
        .unwrap_or(rel_errors.len());
    loop {
        let start = end - MIN_FIT_POINTS.max(end.div_ceil(2)).min(end);
        let (factor, _) = fit_log_linear(rel_errors, start..end, MIN_FIT_POINTS)?;
        let last = end - 1;
        let (_, extrapolate) = fit_log_linear(rel_errors, start..last, 2)?;
        let excess = rel_errors[last].ln() - extrapolate(last);
        if excess > TAIL_OUTLIER_FACTOR.ln() && end > MIN_FIT_POINTS {
            end -= 1;
            continue;
        }
        return Ok(SlopeFit {
            factor,
            window: (start, end),
        });
    }
}

/// Least-squares line through `(i, ln err_i)`; returns `exp(slope)` and the
/// fitted log value as a function of `i`.
fn fit_log_linear(
    rel_errors: &[f64],
    indices: impl Iterator<Item = usize>,
    needed: usize,
) -> Result<(f64, impl Fn(usize) -> f64)> {
    let points: Vec<(f64, f64)> = indices.map(|i| (i as f64, rel_errors[i].ln())).collect();
    if points.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            found: points.len(),
        });
    }
    let count = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / count;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / count;
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let slope = sxy / sxx;
    Ok((slope.exp(), move |i: usize| {
        mean_y + slope * (i as f64 - mean_x)
    }))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Discrepancies {
    /// `|rho_assembled - rho_theoretical| / rho_theoretical`.
    pub assembled_vs_theoretical: Option<f64>,
    /// `|slope_observed - rho_assembled| / rho_assembled`.
    pub observed_vs_assembled: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rho_assembled: f64,
    pub rho_theoretical: Option<f64>,
    pub rho_curvature_product: Option<f64>,
    pub slope_observed: Option<f64>,
    pub fit_window: Option<(usize, usize)>,
    pub zero_gradient: bool,
    pub discrepancies: Discrepancies,
}

impl RateReport {
    pub fn new(
        rho_assembled: f64,
        rho_theoretical: Option<f64>,
        rho_curvature_product: Option<f64>,
        fit: Option<SlopeFit>,
        zero_gradient: bool,
    ) -> Self {
        let rel = |a: f64, b: f64| {
            if b != 0.0 {
                (a - b).abs() / b.abs()
            } else {
                (a - b).abs()
            }
        };
        RateReport {
            rho_assembled,
            rho_theoretical,
            rho_curvature_product,
            slope_observed: fit.map(|f| f.factor),
            fit_window: fit.map(|f| f.window),
            zero_gradient,
            discrepancies: Discrepancies {
                assembled_vs_theoretical: rho_theoretical.map(|t| rel(rho_assembled, t)),
                observed_vs_assembled: fit.map(|f| rel(f.factor, rho_assembled)),
            },
        }
    }
}

/// Rate analysis at `xbar`: assembled radius, closed form (when available),
/// curvature-product radius (identity and Kronecker kinds), and an optional slope fit.
pub fn analyze<T: Scalar>(
    problem: &QuadraticProblem<T>,
    xbar: &DMatrix<T>,
    rel_errors: Option<&[f64]>,
) -> Result<RateReport> {
    let map = LinearizedMap::new(problem, xbar)?;
    let rho = map.rho_assembled()?.as_f64();
    let theoretical = theoretical_rate(problem)?.map(Scalar::as_f64);
    let product = match problem.op().kind() {
        OperatorKind::Identity | OperatorKind::Kronecker { .. } => {
            Some(map.rho_curvature_product()?.as_f64())
        }
        _ => None,
    };
    let fit = rel_errors.map(|e| observed_slope(e, None)).transpose()?;
    Ok(RateReport::new(
        rho,
        theoretical,
        product,
        fit,
        map.is_zero_gradient(),
    ))
}
