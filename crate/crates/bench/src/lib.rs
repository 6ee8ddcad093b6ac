//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `rows` random descriptors of dimension `dim` in `[-1, 1)`.
pub fn random_descriptors(rows: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// `(identity, camera)` labels cycling through `identities` and six cameras.
pub fn labels(rows: usize, identities: u32) -> (Vec<u32>, Vec<Option<u32>>) {
    (
        (0..rows as u32).map(|i| i % identities).collect(),
        (0..rows as u32).map(|i| Some(i % 6)).collect(),
    )
}

/// Uniform points in the unit cube, a stand-in for pose features.
pub fn random_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect()
}
