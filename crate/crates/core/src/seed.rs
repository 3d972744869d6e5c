//! Seed derivation and the crate's random number generator.
//!
//! Every random stream is a `ChaCha8Rng`, which is value-stable across
//! platforms and releases of `rand_chacha`. Child seeds are derived from a
//! base seed and a path of indices with the SplitMix64 finalizer, so a
//! stream depends only on its own coordinates (never on how many other
//! streams were drawn before it).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `path` into `base`: `s <- splitmix64(s ^ splitmix64(i))` for each
/// index `i` in order.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &i| splitmix64(acc ^ splitmix64(i)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
