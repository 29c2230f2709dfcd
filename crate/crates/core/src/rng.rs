//! Seed derivation for reproducible, thread-order independent randomness.
//!
//! Every random stream in a simulation is keyed by the master seed plus a
//! tuple of tags (round, edge, client, purpose), so the value a component
//! draws never depends on which thread or in which order it ran.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a list of tags into a new 64-bit seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(base), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn rng_for(base: u64, tags: &[u64]) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(base, tags))
}

/// Purpose tags so independent streams derived from the same ids never collide.
pub mod stream {
    pub const PARTITION: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const ADVERSARY: u64 = 4;
    pub const ENCRYPT: u64 = 5;
    pub const NOISE: u64 = 6;
    pub const KEYGEN: u64 = 7;
    pub const SAMPLING: u64 = 8;
    pub const GENERATE: u64 = 9;
    pub const HOLDOUT: u64 = 10;
}
