//! Seeded, platform-stable random sources.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent sub-seed from a parent seed and a stage tag.
pub fn derive_seed(parent: u64, tag: &str) -> u64 {
    xxhash_rust::xxh64::xxh64(tag.as_bytes(), parent)
}
