//! Seeded random generation.
//!
//! Every random quantity is drawn from a ChaCha8 stream seeded with
//! `seed_from_u64(seed)` and a per-purpose stream id, so operators, right-hand
//! sides and starting guesses are independent but reproducible.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::qr_positive;
use crate::scalar::Scalar;

/// Stream ids for the different random draws of an experiment.
pub mod stream {
    pub const OPERATOR: u64 = 1;
    pub const OPERATOR_SECOND: u64 = 2;
    pub const RHS: u64 = 3;
    pub const START: u64 = 4;
}

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Matrix with i.i.d. standard normal entries, filled column by column.
pub fn gaussian<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<T> {
    let data: Vec<T> = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z)
        })
        .collect();
    DMatrix::from_vec(rows, cols, data)
}

/// Q factor of a Gaussian `rows x cols` matrix (`rows >= cols`).
pub fn orthonormal<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<T> {
    loop {
        let g = gaussian::<T>(rng, rows, cols);
        if let Ok((q, _)) = qr_positive(&g, "random orthonormal factor") {
            return q;
        }
    }
}
