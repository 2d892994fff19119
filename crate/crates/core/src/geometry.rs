//! Geometry of the fixed-rank variety: pseudoinverse, the row/column/tangent
//! projectors, their directional derivatives, and the curvature maps at
//! critical points.
//!
//! For `X` of rank `k` with thin SVD `U S V^T`:
//!
//! ```text
//! P1(X)[Z] = Z X^+ X = Z V V^T          (row space fixed)
//! P2(X)[Z] = X X^+ Z = U U^T Z          (column space fixed)
//! P(X)     = P1 + P2 - P1 P2            (tangent space)
//! ```

use nalgebra::DMatrix;

use crate::error::{check_shape, Error, Result};
use crate::linalg::{self, qr_positive, ThinSvd, RANK_DROP_TOL};
use crate::scalar::Scalar;

/// Default relative cut-off for [`pinv`].
pub const PINV_REL_TOL: f64 = 1e-12;

/// Default tolerance of the critical-point check in [`curvature_n`].
pub const CRITICAL_TOL: f64 = 1e-8;

/// Orthonormality drift accepted by [`LowRankState::new`].
const ORTHONORMAL_TOL: f64 = 1e-10;

/// Rank-`k` matrix `X = U S V^T` with orthonormal `U` (m x k) and `V` (n x k).
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankState<T: Scalar> {
    u: DMatrix<T>,
    s: DMatrix<T>,
    v: DMatrix<T>,
}

impl<T: Scalar> LowRankState<T> {
    pub fn new(u: DMatrix<T>, s: DMatrix<T>, v: DMatrix<T>) -> Result<Self> {
        let k = u.ncols();
        check_shape("core factor S", (k, k), s.shape())?;
        check_shape("right factor V", (v.nrows(), k), v.shape())?;
        if k == 0 || k > u.nrows() || k > v.nrows() {
            return Err(Error::Invalid(format!(
                "rank {k} outside 1..=min({}, {})",
                u.nrows(),
                v.nrows()
            )));
        }
        let eye = DMatrix::<T>::identity(k, k);
        let drift = (u.transpose() * &u - &eye)
            .norm()
            .max((v.transpose() * &v - &eye).norm());
        if drift > T::lit(ORTHONORMAL_TOL) {
            return Err(Error::Invalid(format!(
                "factors are not orthonormal (drift {:.3e})",
                drift.as_f64()
            )));
        }
        Ok(LowRankState { u, s, v })
    }

    /// Orthonormalizes `X = L R^T` by QR of both factors.
    pub fn from_factors(left: &DMatrix<T>, right: &DMatrix<T>) -> Result<Self> {
        let (q1, r1) = qr_positive(left, "left factor")?;
        let (q2, r2) = qr_positive(right, "right factor")?;
        Self::new(q1, r1 * r2.transpose(), q2)
    }

    /// Rank-`k` truncated SVD of `x`.
    pub fn truncate(x: &DMatrix<T>, k: usize) -> Result<Self> {
        let svd = ThinSvd::new(x).truncated(k);
        if svd.sigma.len() < k {
            return Err(Error::Invalid(format!(
                "rank {k} exceeds matrix dimensions"
            )));
        }
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(svd.sigma.clone()));
        let state = Self::new(svd.u, s, svd.v)?;
        state.check_full_rank("truncated SVD")?;
        Ok(state)
    }

    pub fn u(&self) -> &DMatrix<T> {
        &self.u
    }

    pub fn s(&self) -> &DMatrix<T> {
        &self.s
    }

    pub fn v(&self) -> &DMatrix<T> {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u.nrows(), self.v.nrows())
    }

    pub fn to_matrix(&self) -> DMatrix<T> {
        &self.u * &self.s * self.v.transpose()
    }

    /// Smallest singular value of `S`.
    pub fn sigma_min(&self) -> T {
        linalg::singular_values(&self.s)
            .last()
            .copied()
            .unwrap_or_else(T::zero)
    }

    pub fn check_full_rank(&self, context: &'static str) -> Result<()> {
        let ratio = linalg::conditioning_ratio(&self.s);
        if ratio > T::lit(RANK_DROP_TOL) {
            Ok(())
        } else {
            Err(Error::RankDrop {
                context,
                ratio: ratio.as_f64(),
            })
        }
    }

    /// Projectors at this point.
    pub fn projectors(&self) -> Result<ProjectorBundle<T>> {
        self.check_full_rank("projector base point")?;
        let s_inv = self.s.clone().try_inverse().ok_or(Error::RankDrop {
            context: "projector base point",
            ratio: 0.0,
        })?;
        Ok(ProjectorBundle {
            x: self.to_matrix(),
            x_pinv: &self.v * s_inv * self.u.transpose(),
            u: self.u.clone(),
            v: self.v.clone(),
        })
    }
}

/// SVD-based Moore-Penrose pseudoinverse; singular values at or below
/// `rel_tol * sigma_max` are treated as zero.
pub fn pinv<T: Scalar>(x: &DMatrix<T>, rel_tol: T) -> DMatrix<T> {
    let (m, n) = x.shape();
    let svd = ThinSvd::new(x);
    let cutoff = rel_tol * svd.sigma_or_zero(0);
    let mut out = DMatrix::zeros(n, m);
    for (j, &s) in svd.sigma.iter().enumerate() {
        if s > cutoff && s > T::zero() {
            out += svd.v.column(j) * svd.u.column(j).transpose() * (T::one() / s);
        }
    }
    out
}

/// `Z X^+ X`.
pub fn project_row<T: Scalar>(x: &DMatrix<T>, z: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_shape("project_row", x.shape(), z.shape())?;
    Ok(z * pinv(x, T::lit(PINV_REL_TOL)) * x)
}

/// `X X^+ Z`.
pub fn project_col<T: Scalar>(x: &DMatrix<T>, z: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_shape("project_col", x.shape(), z.shape())?;
    Ok(x * pinv(x, T::lit(PINV_REL_TOL)) * z)
}

/// `P1(X)[Z] + P2(X)[Z] - P1(X) P2(X)[Z]`.
pub fn project_tangent<T: Scalar>(x: &DMatrix<T>, z: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_shape("project_tangent", x.shape(), z.shape())?;
    let xp = pinv(x, T::lit(PINV_REL_TOL));
    let row = xp.clone() * x;
    let col = x * &xp;
    Ok(z * &row + &col * z - &col * z * &row)
}

/// Projector onto the dominant `k` right singular vectors, `V(X) V(X)^T`.
///
/// Smooth on matrices with `sigma_k > sigma_{k+1}` and equal to `X^+ X` on
/// rank-`k` matrices; this is the extension used for finite differences.
pub fn extended_row_projector<T: Scalar>(x: &DMatrix<T>, k: usize) -> DMatrix<T> {
    let svd = ThinSvd::new(x).truncated(k);
    &svd.v * svd.v.transpose()
}

/// Projector onto the dominant `k` left singular vectors, `U(X) U(X)^T`.
pub fn extended_col_projector<T: Scalar>(x: &DMatrix<T>, k: usize) -> DMatrix<T> {
    let svd = ThinSvd::new(x).truncated(k);
    &svd.u * svd.u.transpose()
}

/// Which of the two alternating subspaces an operation refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `T1(X)`: matrices whose row space lies in that of `X`.
    Row,
    /// `T2(X)`: matrices whose column space lies in that of `X`.
    Col,
}

/// Whether [`curvature_n`] verifies that the gradient is normal to `T(X)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CriticalCheck {
    /// Require `|P(X)[G]| <= tol |G|`.
    Relative(f64),
    Skip,
}

impl Default for CriticalCheck {
    fn default() -> Self {
        CriticalCheck::Relative(CRITICAL_TOL)
    }
}

/// Projectors at a fixed rank-`k` point, with `X^+`, `U`, `V` cached.
#[derive(Clone, Debug)]
pub struct ProjectorBundle<T: Scalar> {
    x: DMatrix<T>,
    x_pinv: DMatrix<T>,
    u: DMatrix<T>,
    v: DMatrix<T>,
}

impl<T: Scalar> ProjectorBundle<T> {
    /// Bundle at a matrix of rank exactly `k` (checked against the SVD).
    pub fn at_matrix(x: &DMatrix<T>, k: usize) -> Result<Self> {
        let svd = ThinSvd::new(x);
        let s1 = svd.sigma_or_zero(0);
        let sk = svd.sigma_or_zero(k.saturating_sub(1));
        if k == 0 || svd.sigma.len() < k || !(sk > T::lit(RANK_DROP_TOL) * s1) {
            return Err(Error::RankDrop {
                context: "projector base point",
                ratio: if s1 > T::zero() {
                    (sk / s1).as_f64()
                } else {
                    0.0
                },
            });
        }
        let skip = svd.sigma_or_zero(k);
        if skip > T::lit(1e-8) * s1 {
            return Err(Error::Invalid(format!(
                "base point has rank > {k} (sigma_{} / sigma_1 = {:.3e})",
                k + 1,
                (skip / s1).as_f64()
            )));
        }
        let svd = svd.truncated(k);
        let mut x_pinv = svd.v.clone();
        for (j, &s) in svd.sigma.iter().enumerate() {
            x_pinv.column_mut(j).scale_mut(T::one() / s);
        }
        let x_pinv = x_pinv * svd.u.transpose();
        Ok(ProjectorBundle {
            x: x.clone(),
            x_pinv,
            u: svd.u,
            v: svd.v,
        })
    }

    pub fn point(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn pinv(&self) -> &DMatrix<T> {
        &self.x_pinv
    }

    /// Orthonormal basis of the column space.
    pub fn u(&self) -> &DMatrix<T> {
        &self.u
    }

    /// Orthonormal basis of the row space.
    pub fn v(&self) -> &DMatrix<T> {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.x.shape()
    }

    pub fn project_row(&self, z: &DMatrix<T>) -> DMatrix<T> {
        (z * &self.v) * self.v.transpose()
    }

    pub fn project_col(&self, z: &DMatrix<T>) -> DMatrix<T> {
        &self.u * (self.u.transpose() * z)
    }

    pub fn project(&self, side: Side, z: &DMatrix<T>) -> DMatrix<T> {
        match side {
            Side::Row => self.project_row(z),
            Side::Col => self.project_col(z),
        }
    }

    pub fn project_tangent(&self, z: &DMatrix<T>) -> DMatrix<T> {
        let row = self.project_row(z);
        let rest = z - &row;
        row + self.project_col(&rest)
    }

    /// `(I - U U^T) Z (I - V V^T)`.
    pub fn project_normal(&self, z: &DMatrix<T>) -> DMatrix<T> {
        z - self.project_tangent(z)
    }

    /// `P1'(X; H)[Z] = Z X^+ H - Z X^+ H X^+ X + Z (I - X^+ X) H^T (X^+)^T`.
    pub fn dp1(&self, h: &DMatrix<T>, z: &DMatrix<T>) -> DMatrix<T> {
        let zxh = z * &self.x_pinv * h;
        let first = &zxh - self.project_row(&zxh);
        let z_perp = z - self.project_row(z);
        first + z_perp * h.transpose() * self.x_pinv.transpose()
    }

    /// `P2'(X; H)[Z] = H X^+ Z - X X^+ H X^+ Z + (X^+)^T H^T (I - X X^+) Z`.
    pub fn dp2(&self, h: &DMatrix<T>, z: &DMatrix<T>) -> DMatrix<T> {
        let hxz = h * &self.x_pinv * z;
        let first = &hxz - self.project_col(&hxz);
        let z_perp = z - self.project_col(z);
        first + self.x_pinv.transpose() * h.transpose() * z_perp
    }

    /// Directional derivative of the projector on `side`.
    pub fn dp(&self, side: Side, h: &DMatrix<T>, z: &DMatrix<T>) -> DMatrix<T> {
        match side {
            Side::Row => self.dp1(h, z),
            Side::Col => self.dp2(h, z),
        }
    }

    /// Verifies `|P(X)[G]| <= tol |G|`.
    pub fn check_critical(&self, g: &DMatrix<T>, tol: f64) -> Result<()> {
        let residual = self.project_tangent(g).norm();
        let g_norm = g.norm();
        if residual <= T::lit(tol) * g_norm {
            return Ok(());
        }
        let relative = if g_norm > T::zero() {
            (residual / g_norm).as_f64()
        } else {
            f64::INFINITY
        };
        Err(Error::NotCritical {
            residual: residual.as_f64(),
            relative,
            tol,
        })
    }

    /// Curvature map at a critical point with gradient `g`.
    ///
    /// `Row`: `G H^T (X^+)^T`, `Col`: `(X^+)^T H^T G`. `H` is projected onto
    /// `T(X)` first, so ambient directions are accepted.
    pub fn curvature_n(
        &self,
        g: &DMatrix<T>,
        h: &DMatrix<T>,
        side: Side,
        check: CriticalCheck,
    ) -> Result<DMatrix<T>> {
        check_shape("curvature gradient", self.shape(), g.shape())?;
        check_shape("curvature direction", self.shape(), h.shape())?;
        if let CriticalCheck::Relative(tol) = check {
            self.check_critical(g, tol)?;
        }
        Ok(self.curvature_unchecked(g, &self.project_tangent(h), side))
    }

    /// Curvature map without checks; `h` must already lie in `T(X)`.
    pub(crate) fn curvature_unchecked(
        &self,
        g: &DMatrix<T>,
        h: &DMatrix<T>,
        side: Side,
    ) -> DMatrix<T> {
        match side {
            // G H^T U S^-1 V^T, grouped to stay at O(mnk).
            Side::Row => g * (h.transpose() * self.x_pinv.transpose()),
            Side::Col => (self.x_pinv.transpose() * h.transpose()) * g,
        }
    }

    /// Orthonormal basis of `T(X)` as columns of an `mn x k(m+n-k)` matrix,
    /// built from the rank-one matrices `u_i v_j^T` with `i <= k` or `j <= k`.
    pub fn tangent_basis(&self) -> DMatrix<T> {
        let (m, n) = self.shape();
        let k = self.rank();
        let u_full = full_basis(&self.u);
        let v_full = full_basis(&self.v);
        let dim = k * (m + n - k);
        let mut basis = DMatrix::zeros(m * n, dim);
        let mut col = 0;
        for j in 0..n {
            for i in 0..m {
                if i < k || j < k {
                    let e = u_full.column(i) * v_full.column(j).transpose();
                    basis.column_mut(col).copy_from_slice(e.as_slice());
                    col += 1;
                }
            }
        }
        basis
    }
}

fn full_basis<T: Scalar>(q: &DMatrix<T>) -> DMatrix<T> {
    let (m, k) = q.shape();
    let mut full = DMatrix::zeros(m, m);
    full.columns_mut(0, k).copy_from(q);
    full.columns_mut(k, m - k)
        .copy_from(&linalg::orthonormal_complement(q));
    full
}

/// Free-function form of [`ProjectorBundle::dp1`] at a rank-`k` matrix.
pub fn dp1<T: Scalar>(
    x: &DMatrix<T>,
    k: usize,
    h: &DMatrix<T>,
    z: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    check_shape("dp1 direction", x.shape(), h.shape())?;
    check_shape("dp1 argument", x.shape(), z.shape())?;
    Ok(ProjectorBundle::at_matrix(x, k)?.dp1(h, z))
}

/// Free-function form of [`ProjectorBundle::dp2`] at a rank-`k` matrix.
pub fn dp2<T: Scalar>(
    x: &DMatrix<T>,
    k: usize,
    h: &DMatrix<T>,
    z: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    check_shape("dp2 direction", x.shape(), h.shape())?;
    check_shape("dp2 argument", x.shape(), z.shape())?;
    Ok(ProjectorBundle::at_matrix(x, k)?.dp2(h, z))
}

/// Curvature map `N_i[H]` at a critical point `xbar` of rank `k` with gradient `g`.
pub fn curvature_n<T: Scalar>(
    xbar: &DMatrix<T>,
    k: usize,
    g: &DMatrix<T>,
    h: &DMatrix<T>,
    side: Side,
    check: CriticalCheck,
) -> Result<DMatrix<T>> {
    ProjectorBundle::at_matrix(xbar, k)?.curvature_n(g, h, side, check)
}
