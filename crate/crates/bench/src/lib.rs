//! Shared fixtures for the benchmarks.

use mutdet_core::nn::Matrix;
use mutdet_core::OrientedBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Random overlapping box pairs around the origin.
pub fn box_pairs(rng: &mut ChaCha8Rng, count: usize) -> Vec<(OrientedBox, OrientedBox)> {
    let draw = |r: &mut ChaCha8Rng| {
        OrientedBox::new(
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(0.5..3.0),
            r.random_range(0.5..3.0),
            r.random_range(-1.5..1.5),
        )
        .unwrap()
    };
    (0..count).map(|_| (draw(rng), draw(rng))).collect()
}
