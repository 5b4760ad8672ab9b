//! Reproducible per-path random streams.
//!
//! Every path draws from its own ChaCha8 stream selected by `(seed, stream)`, so
//! a path's randomness does not depend on how paths are scheduled across threads.

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type PathRng = ChaCha8Rng;

pub fn path_rng(seed: u64, stream: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser, used to derive independent seeds for sub-experiments.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Exponential variate with the given rate by inversion, strictly positive.
#[inline]
pub fn exponential(rng: &mut PathRng, rate: f64) -> f64 {
    let u: f64 = rng.sample(Open01);
    -u.ln() / rate
}

#[inline]
pub fn uniform_index(rng: &mut PathRng, n: usize) -> usize {
    rng.gen_range(0..n)
}
