//! Shared fixtures for the criterion benches in `benches/`.

use fusion_iv::sim::{gen_fused, misspecify, DgpParams};
use fusion_iv::FusedSample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A simulated fused sample of `n` rows with transformed covariates
/// attached, so every scenario's working models can be fitted on it.
pub fn fixture(n: usize, seed: u64) -> FusedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = gen_fused(&DgpParams::default(), n, &mut rng).expect("valid design").sample;
    misspecify(&s, &mut rng).expect("three covariates")
}
