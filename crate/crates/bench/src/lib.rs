//! Shared fixtures for the kernel benchmarks.

use rand::Rng;
use sparse_rep::{rng_from_seed, Matrix};

/// Batch of uniform `[0, 1)` observations, as produced by normalized domains.
pub fn uniform_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    let data = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
    Matrix::from_vec(rows, cols, data).expect("shape matches data")
}
