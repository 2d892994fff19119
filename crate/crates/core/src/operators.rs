//! Symmetric positive definite Hessian operators on `R^{m x n}`.
//!
//! Vectorization is column-major throughout, so a Kronecker operator with
//! factors `A1` (m x m) and `A2` (n x n) satisfies
//! `(A2 ⊗ A1) vec(X) = vec(A1 X A2^T)`.

use nalgebra::DMatrix;

use crate::error::{check_shape, Error, Result};
use crate::linalg::{self, asymmetry, symmetrize, unvec, vec_col};
use crate::random;
use crate::scalar::Scalar;

/// Largest `m * n` for which an operator (or a linearized map) is assembled densely.
pub const DENSE_CAP: usize = 10_000;

/// Relative asymmetry tolerated by the constructors before symmetrizing.
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub enum OperatorKind<T: Scalar> {
    Identity,
    /// `X -> A1 X A2^T`.
    Kronecker {
        a1: DMatrix<T>,
        a2: DMatrix<T>,
    },
    /// `X -> D X + X D` with `D = (n+1)^2 tridiag(-1, 2, -1)`.
    Laplace2D {
        d: DMatrix<T>,
    },
    /// `vec(X) -> M vec(X)`.
    DenseSpd {
        matrix: DMatrix<T>,
    },
}

#[derive(Clone, Debug)]
pub struct HessianOperator<T: Scalar> {
    kind: OperatorKind<T>,
    rows: usize,
    cols: usize,
}

impl<T: Scalar> HessianOperator<T> {
    pub fn identity(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Invalid("operator shape must be positive".into()));
        }
        Ok(HessianOperator {
            kind: OperatorKind::Identity,
            rows,
            cols,
        })
    }

    /// Kronecker operator `A2 ⊗ A1`; both factors must be SPD.
    pub fn kronecker(a1: DMatrix<T>, a2: DMatrix<T>) -> Result<Self> {
        let a1 = checked_spd(a1, "Kronecker factor A1")?;
        let a2 = checked_spd(a2, "Kronecker factor A2")?;
        let (rows, cols) = (a1.nrows(), a2.nrows());
        Ok(HessianOperator {
            kind: OperatorKind::Kronecker { a1, a2 },
            rows,
            cols,
        })
    }

    /// Five-point Laplacian with zero Dirichlet conditions on an `n x n` grid.
    pub fn laplace_2d(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("Laplace grid size must be positive".into()));
        }
        Ok(HessianOperator {
            kind: OperatorKind::Laplace2D { d: laplace_1d(n) },
            rows: n,
            cols: n,
        })
    }

    /// Dense SPD operator given by an `mn x mn` matrix acting on `vec(X)`.
    pub fn dense_spd(rows: usize, cols: usize, matrix: DMatrix<T>) -> Result<Self> {
        let dim = rows * cols;
        check_shape("dense SPD operator", (dim, dim), matrix.shape())?;
        if dim == 0 {
            return Err(Error::Invalid("operator shape must be positive".into()));
        }
        let matrix = checked_spd(matrix, "dense SPD operator")?;
        Ok(HessianOperator {
            kind: OperatorKind::DenseSpd { matrix },
            rows,
            cols,
        })
    }

    pub fn kind(&self) -> &OperatorKind<T> {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            OperatorKind::Identity => "identity",
            OperatorKind::Kronecker { .. } => "kronecker",
            OperatorKind::Laplace2D { .. } => "laplace",
            OperatorKind::DenseSpd { .. } => "dense_spd",
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    /// `A[X]`.
    pub fn apply(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_shape("operator apply", self.shape(), x.shape())?;
        Ok(self.apply_unchecked(x))
    }

    pub(crate) fn apply_unchecked(&self, x: &DMatrix<T>) -> DMatrix<T> {
        match &self.kind {
            OperatorKind::Identity => x.clone(),
            OperatorKind::Kronecker { a1, a2 } => a1 * x * a2.transpose(),
            OperatorKind::Laplace2D { d } => d * x + x * d,
            OperatorKind::DenseSpd { matrix } => {
                let y = matrix * vec_col(x);
                unvec(y.as_slice(), self.rows, self.cols)
            }
        }
    }

    /// Matrix of the operator in the basis of unit matrices, column-major `vec`.
    pub fn assemble(&self) -> Result<DMatrix<T>> {
        let dim = self.dim();
        if dim > DENSE_CAP {
            return Err(Error::Capacity {
                size: dim,
                cap: DENSE_CAP,
            });
        }
        let (m, n) = self.shape();
        Ok(match &self.kind {
            OperatorKind::Identity => DMatrix::identity(dim, dim),
            OperatorKind::Kronecker { a1, a2 } => a2.kronecker(a1),
            OperatorKind::Laplace2D { d } => {
                DMatrix::<T>::identity(n, n).kronecker(d)
                    + d.kronecker(&DMatrix::<T>::identity(m, m))
            }
            OperatorKind::DenseSpd { matrix } => matrix.clone(),
        })
    }

    /// Matrix of `U -> A[U V^T] V` on `vec(U)`, `U` in `R^{m x k}`.
    ///
    /// This is `(V ⊗ I)^T A (V ⊗ I)`, the system of the row half-step.
    pub fn row_system(&self, v: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_shape("row system basis", (self.cols, v.ncols()), v.shape())?;
        let m = self.rows;
        let eye_m = DMatrix::<T>::identity(m, m);
        let vtv = v.transpose() * v;
        Ok(match &self.kind {
            OperatorKind::Identity => vtv.kronecker(&eye_m),
            OperatorKind::Kronecker { a1, a2 } => (v.transpose() * a2 * v).kronecker(a1),
            OperatorKind::Laplace2D { d } => {
                vtv.kronecker(d) + (v.transpose() * d * v).kronecker(&eye_m)
            }
            OperatorKind::DenseSpd { matrix } => {
                let w = v.kronecker(&eye_m);
                symmetrize(&(w.transpose() * (matrix * &w)))
            }
        })
    }

    /// Matrix of `W -> U^T A[U W]` on `vec(W)`, `W` in `R^{k x n}`.
    ///
    /// This is `(I ⊗ U)^T A (I ⊗ U)`, the system of the column half-step.
    pub fn col_system(&self, u: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_shape("column system basis", (self.rows, u.ncols()), u.shape())?;
        let n = self.cols;
        let eye_n = DMatrix::<T>::identity(n, n);
        let utu = u.transpose() * u;
        Ok(match &self.kind {
            OperatorKind::Identity => eye_n.kronecker(&utu),
            OperatorKind::Kronecker { a1, a2 } => a2.kronecker(&(u.transpose() * a1 * u)),
            OperatorKind::Laplace2D { d } => {
                eye_n.kronecker(&(u.transpose() * d * u)) + d.kronecker(&utu)
            }
            OperatorKind::DenseSpd { matrix } => {
                let w = eye_n.kronecker(u);
                symmetrize(&(w.transpose() * (matrix * &w)))
            }
        })
    }
}

fn checked_spd<T: Scalar>(a: DMatrix<T>, context: &'static str) -> Result<DMatrix<T>> {
    if !a.is_square() {
        return Err(Error::Dimension {
            context,
            expected: (a.nrows(), a.nrows()),
            found: a.shape(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("{context}: non-finite entry")));
    }
    if asymmetry(&a) > T::lit(SYMMETRY_TOL) {
        return Err(Error::Invalid(format!(
            "{context}: matrix is not symmetric"
        )));
    }
    let a = symmetrize(&a);
    linalg::cholesky(a.clone(), context)?;
    Ok(a)
}

/// `D_n = (n+1)^2 tridiag(-1, 2, -1)`.
pub fn laplace_1d<T: Scalar>(n: usize) -> DMatrix<T> {
    let h2 = T::count((n + 1) * (n + 1));
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            T::lit(2.0) * h2
        } else if i.abs_diff(j) == 1 {
            -h2
        } else {
            T::zero()
        }
    })
}

/// `R^T R` for a `dim x dim` standard normal `R`, symmetrized after the product.
pub fn make_random_spd<T: Scalar>(dim: usize, seed: u64) -> DMatrix<T> {
    random_spd_on_stream(dim, seed, random::stream::OPERATOR)
}

/// [`make_random_spd`] drawn from an explicit random stream.
pub fn random_spd_on_stream<T: Scalar>(dim: usize, seed: u64, stream: u64) -> DMatrix<T> {
    let mut rng = random::rng(seed, stream);
    let r = random::gaussian::<T>(&mut rng, dim, dim);
    symmetrize(&(r.transpose() * r))
}
