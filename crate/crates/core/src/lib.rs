//! Alternating least squares (ALS) on the manifold of fixed-rank matrices for
//! quadratic objectives `f(X) = 1/2 <X, A[X]>_F - <X, B>_F`, the two-sided
//! block power method, and tools to assemble the linearized ALS map at a fixed
//! point and compare its spectral radius with observed convergence.
//!
//! The numerical core is generic over [`Scalar`] (`f32`, `f64`); the aliases
//! below fix `f64`, the precision used by the experiment harness.

// `!(x > tol)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod operators;
pub mod random;
pub mod scalar;
pub mod solvers;

pub use analysis::{
    analyze, apply_s_prime, assemble_s_prime, observed_slope, rho_via_curvature_product,
    spectral_radius, theoretical_rate, LinearizedMap, RateReport, SlopeFit,
};
pub use error::{Error, Result};
pub use geometry::{pinv, CriticalCheck, LowRankState, ProjectorBundle, Side};
pub use operators::{make_random_spd, HessianOperator, OperatorKind};
pub use scalar::Scalar;
pub use solvers::{
    kronecker_reduced_run, orthogonal_iteration, IterationTrace, QuadraticProblem, StopRule,
};

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Operator = HessianOperator<f64>;
pub type Problem = QuadraticProblem<f64>;
pub type State = LowRankState<f64>;
pub type Projectors = ProjectorBundle<f64>;

pub type Matrix32 = nalgebra::DMatrix<f32>;
pub type Operator32 = HessianOperator<f32>;
pub type Problem32 = QuadraticProblem<f32>;
pub type State32 = LowRankState<f32>;
