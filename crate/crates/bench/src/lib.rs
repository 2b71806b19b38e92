//! Seeded inputs shared by the benchmarks.

use mmsurv::cohort::SurvivalOutcome;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn features(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
}

/// Outcomes whose hazard rises with the first column of `x`.
pub fn outcomes(x: &DMatrix<f64>, seed: u64) -> Vec<SurvivalOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..x.nrows())
        .map(|i| {
            let scale = (-x[(i, 0)]).exp() * 1000.0;
            let t = (-(1.0 - rng.random::<f64>()).ln() * scale)
                .ceil()
                .clamp(1.0, 4000.0);
            SurvivalOutcome::new(t as u32, rng.random_bool(0.7))
        })
        .collect()
}

pub fn risks(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}
