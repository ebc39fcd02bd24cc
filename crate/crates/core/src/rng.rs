//! Seed derivation.
//!
//! Every random decision in the simulator draws from a ChaCha stream whose seed
//! is derived from the experiment seed plus a fixed tag path, so results never
//! depend on the order in which independent pieces of work are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `base` with each component of `path` into a new 64-bit seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc.rotate_left(23) ^ splitmix64(p)))
}

/// A deterministic generator for `(base, path)`.
pub fn rng_for(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

// Tags that keep the derived streams of different subsystems apart.
pub(crate) const TAG_INIT: u64 = 1;
pub(crate) const TAG_TEST_SPLIT: u64 = 2;
pub(crate) const TAG_PARTITION: u64 = 3;
pub(crate) const TAG_SUPPORT_SPLIT: u64 = 4;
pub(crate) const TAG_CLIENT_SAMPLING: u64 = 5;
pub(crate) const TAG_INNER_BATCHES: u64 = 6;
pub(crate) const TAG_BASELINE_BATCHES: u64 = 7;
