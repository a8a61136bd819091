//! Seeded randomness. Every random draw in the crate goes through here so a
//! run is reproducible from the seeds in its config.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::text::fnv1a;

/// Recorded in run manifests.
pub const GENERATOR: &str = "ChaCha8 (rand_chacha 0.3, seed_from_u64)";

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for `key` (e.g. a user id) under a base seed.
pub fn keyed(seed: u64, key: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(key.as_bytes()))
}
