//! Seeded randomness shared by every sampled experiment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based ChaCha stream cipher with 8 rounds.
pub type LabRng = ChaCha8Rng;

/// Identifier written into experiment outputs next to the seed.
pub const RNG_ALGORITHM: &str = "chacha8";

pub fn lab_rng(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for worker/shard `ordinal`: seed = base seed + ordinal.
pub fn shard_rng(base_seed: u64, ordinal: u64) -> LabRng {
    lab_rng(base_seed.wrapping_add(ordinal))
}
