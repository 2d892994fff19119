//! Dense helpers on top of nalgebra: column-major vectorization, sorted thin
//! SVD, sign-normalized QR, and symmetric square roots.
//!
//! SVDs and eigenvalue problems are computed by `faer` in double precision;
//! nalgebra's own SVD can return inaccurate singular vectors for nearly
//! rank-deficient inputs, which is exactly the regime of fixed-rank iterates.

use std::sync::Once;

use faer::Mat;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Singular values at or below this fraction of the largest one count as a
/// rank drop in QR factors.
pub const RANK_DROP_TOL: f64 = 1e-12;

/// Frobenius inner product `<A, B>_F = sum_ij a_ij b_ij`.
pub fn frobenius_inner<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    a.dot(b)
}

/// Stacks the columns of `x` (column-major `vec`).
pub fn vec_col<T: Scalar>(x: &DMatrix<T>) -> DVector<T> {
    DVector::from_column_slice(x.as_slice())
}

/// Inverse of [`vec_col`].
pub fn unvec<T: Scalar>(v: &[T], rows: usize, cols: usize) -> DMatrix<T> {
    DMatrix::from_column_slice(rows, cols, v)
}

/// Thin SVD `X = U diag(sigma) V^T` with singular values in descending order.
#[derive(Clone, Debug)]
pub struct ThinSvd<T: Scalar> {
    pub u: DMatrix<T>,
    pub sigma: Vec<T>,
    pub v: DMatrix<T>,
}

impl<T: Scalar> ThinSvd<T> {
    /// If the solver fails (non-finite input), every entry of the result is
    /// NaN so that downstream checks reject it.
    pub fn new(x: &DMatrix<T>) -> Self {
        let (m, n) = x.shape();
        let r = m.min(n);
        if r == 0 {
            return ThinSvd {
                u: DMatrix::zeros(m, 0),
                sigma: Vec::new(),
                v: DMatrix::zeros(n, 0),
            };
        }
        match to_faer(x).thin_svd() {
            Ok(svd) => ThinSvd {
                u: DMatrix::from_fn(m, r, |i, j| T::lit(svd.U()[(i, j)])),
                sigma: (0..r).map(|j| T::lit(svd.S().column_vector()[j])).collect(),
                v: DMatrix::from_fn(n, r, |i, j| T::lit(svd.V()[(i, j)])),
            },
            _ => {
                let nan = T::lit(f64::NAN);
                ThinSvd {
                    u: DMatrix::from_element(m, r, nan),
                    sigma: vec![nan; r],
                    v: DMatrix::from_element(n, r, nan),
                }
            }
        }
    }

    /// Keeps the `k` dominant triplets.
    pub fn truncated(mut self, k: usize) -> Self {
        let k = k.min(self.sigma.len());
        self.u = self.u.columns(0, k).into_owned();
        self.v = self.v.columns(0, k).into_owned();
        self.sigma.truncate(k);
        self
    }

    pub fn recompose(&self) -> DMatrix<T> {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    /// Singular value `i` (0-based), zero past the stored range.
    pub fn sigma_or_zero(&self, i: usize) -> T {
        self.sigma.get(i).copied().unwrap_or_else(T::zero)
    }
}

/// Descending singular values of `x`.
pub fn singular_values<T: Scalar>(x: &DMatrix<T>) -> Vec<T> {
    ThinSvd::new(x).sigma
}

/// Best rank-`k` approximation in the Frobenius norm.
pub fn truncated_svd<T: Scalar>(x: &DMatrix<T>, k: usize) -> DMatrix<T> {
    ThinSvd::new(x).truncated(k).recompose()
}

/// `sigma_min / sigma_max` of a square or tall factor; zero for a zero matrix.
pub fn conditioning_ratio<T: Scalar>(r: &DMatrix<T>) -> T {
    let s = singular_values(r);
    match (s.first(), s.last()) {
        (Some(&max), Some(&min)) if max > T::zero() => min / max,
        _ => T::zero(),
    }
}

/// Thin QR `A = Q R` of a tall `m x k` matrix with `diag(R) >= 0`.
///
/// Fails with [`Error::RankDrop`] when `sigma_k(A) <= 1e-12 sigma_1(A)`.
pub fn qr_positive<T: Scalar>(
    a: &DMatrix<T>,
    context: &'static str,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let (m, k) = a.shape();
    if m < k {
        return Err(Error::Invalid(format!(
            "{context}: tall QR needs rows >= cols, got {m}x{k}"
        )));
    }
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..k {
        if r[(i, i)] < T::zero() {
            q.column_mut(i).neg_mut();
            r.row_mut(i).neg_mut();
        }
    }
    let ratio = conditioning_ratio(&r);
    if !(ratio > T::lit(RANK_DROP_TOL)) {
        return Err(Error::RankDrop {
            context,
            ratio: ratio.as_f64(),
        });
    }
    Ok((q, r))
}

/// Columns spanning the orthogonal complement of the orthonormal columns of `u`.
pub fn orthonormal_complement<T: Scalar>(u: &DMatrix<T>) -> DMatrix<T> {
    let (m, k) = u.shape();
    if k >= m {
        return DMatrix::zeros(m, 0);
    }
    let mut aug = DMatrix::zeros(m, k + m);
    aug.columns_mut(0, k).copy_from(u);
    aug.columns_mut(k, m).fill_with_identity();
    let q = aug.qr().q();
    q.columns(k, m - k).into_owned()
}

/// `(A + A^T) / 2`.
pub fn symmetrize<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    (a + a.transpose()) * T::lit(0.5)
}

/// Relative Frobenius asymmetry `|A - A^T| / |A|`.
pub fn asymmetry<T: Scalar>(a: &DMatrix<T>) -> T {
    let norm = a.norm();
    if norm == T::zero() {
        return T::zero();
    }
    (a - a.transpose()).norm() / norm
}

pub fn cholesky<T: Scalar>(a: DMatrix<T>, context: &'static str) -> Result<Cholesky<T, Dyn>> {
    a.cholesky().ok_or(Error::NotPositiveDefinite { context })
}

/// Symmetric eigendecomposition with ascending eigenvalues.
/// As with [`ThinSvd::new`], a solver failure yields NaN entries.
pub fn symmetric_eigen<T: Scalar>(a: &DMatrix<T>) -> (Vec<T>, DMatrix<T>) {
    let n = a.nrows();
    match to_faer(&symmetrize(a)).self_adjoint_eigen(faer::Side::Lower) {
        Ok(eig) => (
            (0..n).map(|j| T::lit(eig.S().column_vector()[j])).collect(),
            DMatrix::from_fn(n, n, |i, j| T::lit(eig.U()[(i, j)])),
        ),
        Err(_) => (
            vec![T::lit(f64::NAN); n],
            DMatrix::from_element(n, n, T::lit(f64::NAN)),
        ),
    }
}

/// Eigenvalues `(re, im)` of a general square matrix.
pub fn eigenvalues<T: Scalar>(a: &DMatrix<T>) -> Result<Vec<(f64, f64)>> {
    if !a.is_square() {
        return Err(Error::Dimension {
            context: "eigenvalues",
            expected: (a.nrows(), a.nrows()),
            found: a.shape(),
        });
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let values = to_faer(a)
        .eigenvalues()
        .map_err(|_| Error::Eigensolver(a.nrows()))?;
    Ok(values.iter().map(|z| (z.re, z.im)).collect())
}

static SEQUENTIAL: Once = Once::new();

/// Copies into a `faer` matrix. Decompositions run single-threaded: callers
/// already parallelize at a coarser level, and this keeps results independent
/// of thread scheduling.
fn to_faer<T: Scalar>(x: &DMatrix<T>) -> Mat<f64> {
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
    Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)].as_f64())
}

/// Symmetric square root and inverse square root of an SPD matrix.
pub fn spd_sqrt_pair<T: Scalar>(
    a: &DMatrix<T>,
    context: &'static str,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let (values, vectors) = symmetric_eigen(a);
    if values.first().is_none_or(|&l| !(l > T::zero())) {
        return Err(Error::NotPositiveDefinite { context });
    }
    let mut sqrt_scaled = vectors.clone();
    let mut inv_sqrt_scaled = vectors.clone();
    for (j, &l) in values.iter().enumerate() {
        let s = l.sqrt();
        sqrt_scaled.column_mut(j).scale_mut(s);
        inv_sqrt_scaled.column_mut(j).scale_mut(T::one() / s);
    }
    let vt = vectors.transpose();
    Ok((
        symmetrize(&(sqrt_scaled * &vt)),
        symmetrize(&(inv_sqrt_scaled * vt)),
    ))
}

/// Relative Frobenius distance `|a - b| / |b|`, or the absolute distance when `b = 0`.
pub fn rel_diff<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let denom = b.norm();
    let diff = (a - b).norm();
    if denom > T::zero() {
        diff / denom
    } else {
        diff
    }
}
