//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All matrix code is written against [`Scalar`], which layers a few
//! conversion helpers on top of nalgebra's `RealField` (itself built on the
//! `num-traits` hierarchy). `f64` is the working precision for experiments;
//! `f32` is supported for the core algebra.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    /// Lossy conversion to `f64` for reporting and serialization.
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    fn count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize representable")
    }

    fn machine_eps() -> Self {
        Self::default_epsilon()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
