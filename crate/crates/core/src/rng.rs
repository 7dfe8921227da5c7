//! Seed derivation.
//!
//! Every random stream in the laboratory is a ChaCha8 generator seeded from a
//! 64-bit value. Child seeds are derived from a parent seed and a path of
//! counters, so any stream can be reconstructed without replaying others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

/// Stream tags used when splitting an instance seed.
pub mod stream {
    pub const CHAIN: u64 = 1;
    pub const FEATURES: u64 = 2;
    pub const TRAJECTORY: u64 = 3;
    pub const RANK_RETRY: u64 = 4;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `parent` and a path of counters.
pub fn split_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(parent), |acc, &c| splitmix64(acc ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn rng_from_seed(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}
