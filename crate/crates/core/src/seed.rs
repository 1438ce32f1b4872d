//! Seed derivation shared by every stochastic stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of the SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a sequence of stream tags.
pub fn derive(parent: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix64(parent), |acc, &t| mix64(acc ^ mix64(t)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
