//! Alternating least squares for `f(X) = 1/2 <X, A[X]> - <X, B>` on rank-`k`
//! matrices, the two-sided block power method, and the Kronecker reduction
//! of ALS to the block power method.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::geometry::LowRankState;
use crate::linalg::{self, qr_positive, spd_sqrt_pair, unvec, vec_col};
use crate::operators::HessianOperator;
use crate::scalar::Scalar;

/// Orthonormality required of the fixed factor in a half-step.
const HALF_STEP_ORTHO_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct QuadraticProblem<T: Scalar> {
    op: HessianOperator<T>,
    rhs: DMatrix<T>,
    rank: usize,
}

impl<T: Scalar> QuadraticProblem<T> {
    pub fn new(op: HessianOperator<T>, rhs: DMatrix<T>, rank: usize) -> Result<Self> {
        check_shape("right-hand side", op.shape(), rhs.shape())?;
        let (m, n) = op.shape();
        if rank == 0 || rank > m.min(n) {
            return Err(Error::Invalid(format!(
                "rank {rank} outside 1..={}",
                m.min(n)
            )));
        }
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(
                "right-hand side has non-finite entries".into(),
            ));
        }
        Ok(QuadraticProblem { op, rhs, rank })
    }

    pub fn op(&self) -> &HessianOperator<T> {
        &self.op
    }

    pub fn rhs(&self) -> &DMatrix<T> {
        &self.rhs
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn shape(&self) -> (usize, usize) {
        self.op.shape()
    }

    /// `1/2 <X, A[X]> - <X, B>`.
    pub fn objective(&self, x: &DMatrix<T>) -> Result<T> {
        let ax = self.op.apply(x)?;
        Ok(T::lit(0.5) * x.dot(&ax) - x.dot(&self.rhs))
    }

    /// `A[X] - B`.
    pub fn gradient(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        Ok(self.op.apply(x)? - &self.rhs)
    }

    /// Unconstrained minimizer `A^{-1}[B]` by a dense solve (desk scale only).
    pub fn unconstrained_solution(&self) -> Result<DMatrix<T>> {
        let a = self.op.assemble()?;
        let chol = linalg::cholesky(a, "assembled Hessian")?;
        let (m, n) = self.shape();
        Ok(unvec(chol.solve(&vec_col(&self.rhs)).as_slice(), m, n))
    }

    /// Exact minimizer `U` of `f(U V^T)` for orthonormal `V` (n x k).
    pub fn half_row(&self, v: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_orthonormal(v, "row half-step basis")?;
        let system = self.op.row_system(v)?;
        let chol = linalg::cholesky(system, "row half-step system")?;
        let rhs = &self.rhs * v;
        Ok(unvec(
            chol.solve(&vec_col(&rhs)).as_slice(),
            self.shape().0,
            v.ncols(),
        ))
    }

    /// Exact minimizer `V` of `f(U V^T)` for orthonormal `U` (m x k); returned as `n x k`.
    pub fn half_col(&self, u: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_orthonormal(u, "column half-step basis")?;
        let system = self.op.col_system(u)?;
        let chol = linalg::cholesky(system, "column half-step system")?;
        let rhs = u.transpose() * &self.rhs;
        let vt = unvec(
            chol.solve(&vec_col(&rhs)).as_slice(),
            u.ncols(),
            self.shape().1,
        );
        Ok(vt.transpose())
    }

    /// One ALS sweep: row half-step, QR, column half-step, QR.
    pub fn als_sweep(&self, state: &LowRankState<T>) -> Result<LowRankState<T>> {
        check_shape("ALS state", self.shape(), state.shape())?;
        state.check_full_rank("ALS sweep input")?;
        let u = self.half_row(state.v())?;
        let (q_u, _) = qr_positive(&u, "row half-step")?;
        let v = self.half_col(&q_u)?;
        let (q_v, r_v) = qr_positive(&v, "column half-step")?;
        LowRankState::new(q_u, r_v.transpose(), q_v)
    }

    /// Plain alternating sweep on raw factors (no QR): `U = argmin f(U V^T)`,
    /// then `V = argmin f(U V^T)`. Represents the same matrices as
    /// [`Self::als_sweep`] in exact arithmetic.
    pub fn als_sweep_unnormalized(&self, v: &DMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
        let u_new = self.solve_row_general(v)?;
        let v_new = self.solve_col_general(&u_new)?;
        Ok((u_new, v_new))
    }

    // argmin_U f(U V^T) for a general full-rank V, through the normal equations.
    fn solve_row_general(&self, v: &DMatrix<T>) -> Result<DMatrix<T>> {
        let m = self.shape().0;
        let k = v.ncols();
        let mut system = DMatrix::zeros(m * k, m * k);
        for c in 0..m * k {
            let mut e = DMatrix::zeros(m, k);
            e[(c % m, c / m)] = T::one();
            let col = self.op.apply(&(&e * v.transpose()))? * v;
            system.column_mut(c).copy_from(&vec_col(&col));
        }
        let chol = linalg::cholesky(linalg::symmetrize(&system), "unnormalized row system")?;
        let rhs = &self.rhs * v;
        Ok(unvec(chol.solve(&vec_col(&rhs)).as_slice(), m, k))
    }

    fn solve_col_general(&self, u: &DMatrix<T>) -> Result<DMatrix<T>> {
        let (_, n) = self.shape();
        let k = u.ncols();
        let mut system = DMatrix::zeros(k * n, k * n);
        for c in 0..k * n {
            let mut e = DMatrix::zeros(k, n);
            e[(c % k, c / k)] = T::one();
            let col = u.transpose() * self.op.apply(&(u * &e))?;
            system.column_mut(c).copy_from(&vec_col(&col));
        }
        let chol = linalg::cholesky(linalg::symmetrize(&system), "unnormalized column system")?;
        let rhs = u.transpose() * &self.rhs;
        Ok(unvec(chol.solve(&vec_col(&rhs)).as_slice(), k, n).transpose())
    }

    /// `|P(X)[grad f(X)]|_F` at a full-rank state.
    pub fn projected_gradient_norm(&self, state: &LowRankState<T>) -> Result<T> {
        let g = self.gradient(&state.to_matrix())?;
        let (u, v) = (state.u(), state.v());
        let gv = &g * v;
        let row = &gv * v.transpose();
        let col = u * (u.transpose() * &g);
        let both = u * (u.transpose() * gv) * v.transpose();
        Ok((row + col - both).norm())
    }

    /// Iterates [`Self::als_sweep`] until the stopping rule fires.
    ///
    /// `reference`, when given, is used to record `|X_l - reference|_F` per sweep.
    pub fn als_run(
        &self,
        x0: &LowRankState<T>,
        stop: &StopRule,
        reference: Option<&DMatrix<T>>,
    ) -> Result<AlsOutcome<T>> {
        x0.check_full_rank("ALS start")?;
        let mut state = x0.clone();
        let mut x = state.to_matrix();
        let mut trace = IterationTrace::default();
        let pg0 = self.projected_gradient_norm(&state)?;
        trace.push(self.record(0, &state, &x, pg0, reference)?);
        if pg0 == T::zero() {
            return Ok(AlsOutcome {
                state,
                trace,
                stop_reason: StopReason::GradientTolerance,
            });
        }
        let mut reason = StopReason::MaxSweeps;
        for sweep in 1..=stop.max_sweeps {
            let next = self.als_sweep(&state)?;
            let x_next = next.to_matrix();
            let step = (&x_next - &x).norm();
            let pg = self.projected_gradient_norm(&next)?;
            trace.push(self.record(sweep, &next, &x_next, pg, reference)?);
            state = next;
            x = x_next;
            if pg <= T::lit(stop.grad_tol) * pg0 {
                reason = StopReason::GradientTolerance;
                break;
            }
            if step <= T::lit(stop.stagnation_tol) {
                reason = StopReason::Stagnation;
                break;
            }
        }
        Ok(AlsOutcome {
            state,
            trace,
            stop_reason: reason,
        })
    }

    /// Exactly `sweeps` ALS sweeps; returns `X_0, ..., X_sweeps`.
    pub fn als_sequence(
        &self,
        x0: &LowRankState<T>,
        sweeps: usize,
    ) -> Result<Vec<LowRankState<T>>> {
        let mut out = Vec::with_capacity(sweeps + 1);
        out.push(x0.clone());
        for _ in 0..sweeps {
            let next = self.als_sweep(out.last().expect("non-empty"))?;
            out.push(next);
        }
        Ok(out)
    }

    fn record(
        &self,
        sweep: usize,
        state: &LowRankState<T>,
        x: &DMatrix<T>,
        pg: T,
        reference: Option<&DMatrix<T>>,
    ) -> Result<SweepRecord> {
        Ok(SweepRecord {
            sweep,
            objective: self.objective(x)?.as_f64(),
            error: reference.map(|r| (x - r).norm().as_f64()),
            projected_gradient: pg.as_f64(),
            sigma_min: state.sigma_min().as_f64(),
        })
    }
}

fn check_orthonormal<T: Scalar>(q: &DMatrix<T>, context: &'static str) -> Result<()> {
    let k = q.ncols();
    let drift = (q.transpose() * q - DMatrix::<T>::identity(k, k)).norm();
    if drift <= T::lit(HALF_STEP_ORTHO_TOL) {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "{context}: columns not orthonormal (drift {:.3e})",
            drift.as_f64()
        )))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopRule {
    pub max_sweeps: usize,
    /// Relative projected-gradient tolerance `|P(X)[grad f]| / |P(X0)[grad f(X0)]|`.
    pub grad_tol: f64,
    /// Absolute step tolerance `|X_{l+1} - X_l|_F`; zero disables it.
    pub stagnation_tol: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            max_sweeps: 500,
            grad_tol: 1e-10,
            stagnation_tol: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    Stagnation,
    MaxSweeps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub objective: f64,
    /// `|X_l - Xbar|_F` when a reference was supplied.
    pub error: Option<f64>,
    pub projected_gradient: f64,
    pub sigma_min: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub records: Vec<SweepRecord>,
}

impl IterationTrace {
    pub fn push(&mut self, record: SweepRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// First sweep at which `f` increased by more than `slack`.
    pub fn monotonicity_violation(&self, slack: f64) -> Option<usize> {
        self.records
            .windows(2)
            .find(|w| w[1].objective > w[0].objective + slack)
            .map(|w| w[1].sweep)
    }

    /// Per-sweep errors divided by `scale`; `None` without a reference.
    pub fn relative_errors(&self, scale: f64) -> Option<Vec<f64>> {
        self.records
            .iter()
            .map(|r| r.error.map(|e| e / scale))
            .collect()
    }

    /// Projected-gradient norms relative to the first record.
    pub fn relative_projected_residuals(&self) -> Vec<f64> {
        let first = self.records.first().map_or(1.0, |r| r.projected_gradient);
        let scale = if first > 0.0 { first } else { 1.0 };
        self.records
            .iter()
            .map(|r| r.projected_gradient / scale)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct AlsOutcome<T: Scalar> {
    pub state: LowRankState<T>,
    pub trace: IterationTrace,
    pub stop_reason: StopReason,
}

/// One iterate `X_l = U_l S_l V_l^T` of the block power method.
#[derive(Clone, Debug)]
pub struct PowerIterate<T: Scalar> {
    pub u: DMatrix<T>,
    pub s: DMatrix<T>,
    pub v: DMatrix<T>,
}

impl<T: Scalar> PowerIterate<T> {
    pub fn to_matrix(&self) -> DMatrix<T> {
        &self.u * &self.s * self.v.transpose()
    }
}

/// Simultaneous orthogonal iteration (two-sided block power method).
///
/// Each step: `Q R = qr(B V_l)`, `U_{l+1} = Q`; `Q R = qr(B^T U_{l+1})`,
/// `V_{l+1} = Q`, `S_{l+1} = R^T`. Returns iterates `1..=sweeps`.
pub fn orthogonal_iteration<T: Scalar>(
    b: &DMatrix<T>,
    k: usize,
    v0: &DMatrix<T>,
    sweeps: usize,
) -> Result<Vec<PowerIterate<T>>> {
    check_shape("block power start", (b.ncols(), k), v0.shape())?;
    check_orthonormal(v0, "block power start")?;
    let mut v = v0.clone();
    let mut out = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        let (u, _) = qr_positive(&(b * &v), "block power left step")?;
        let (q, r) = qr_positive(&(b.transpose() * &u), "block power right step")?;
        v = q.clone();
        out.push(PowerIterate {
            u,
            s: r.transpose(),
            v: q,
        });
    }
    Ok(out)
}

/// ALS for `A = A2 ⊗ A1` through the block power method on
/// `C = A1^{-1/2} B A2^{-1/2}`, started from `Y0 = A1^{1/2} X0 A2^{1/2}`.
///
/// Returns `X_l = A1^{-1/2} Y_l A2^{-1/2}` for `l = 1..=sweeps`.
pub fn kronecker_reduced_run<T: Scalar>(
    a1: &DMatrix<T>,
    a2: &DMatrix<T>,
    b: &DMatrix<T>,
    k: usize,
    x0: &LowRankState<T>,
    sweeps: usize,
) -> Result<Vec<DMatrix<T>>> {
    check_shape("Kronecker A1", (b.nrows(), b.nrows()), a1.shape())?;
    check_shape("Kronecker A2", (b.ncols(), b.ncols()), a2.shape())?;
    check_shape("Kronecker start", b.shape(), x0.shape())?;
    let (_, a1_isqrt) = spd_sqrt_pair(a1, "Kronecker factor A1")?;
    let (a2_sqrt, a2_isqrt) = spd_sqrt_pair(a2, "Kronecker factor A2")?;
    let c = &a1_isqrt * b * &a2_isqrt;
    // Row space of Y0 = A1^{1/2} U S V^T A2^{1/2} is the range of A2^{1/2} V.
    let (v0, _) = qr_positive(&(&a2_sqrt * x0.v()), "Kronecker start row space")?;
    let ys = orthogonal_iteration(&c, k, &v0, sweeps)?;
    Ok(ys
        .iter()
        .map(|y| &a1_isqrt * y.to_matrix() * &a2_isqrt)
        .collect())
}

/// Global minimizer of `f` on rank-`k` matrices for `A = A2 ⊗ A1`:
/// `A1^{-1/2} Ybar A2^{-1/2}` with `Ybar` the truncated SVD of `C`.
pub fn kronecker_minimizer<T: Scalar>(
    a1: &DMatrix<T>,
    a2: &DMatrix<T>,
    b: &DMatrix<T>,
    k: usize,
) -> Result<DMatrix<T>> {
    let (_, a1_isqrt) = spd_sqrt_pair(a1, "Kronecker factor A1")?;
    let (_, a2_isqrt) = spd_sqrt_pair(a2, "Kronecker factor A2")?;
    let c = &a1_isqrt * b * &a2_isqrt;
    Ok(&a1_isqrt * linalg::truncated_svd(&c, k) * &a2_isqrt)
}
