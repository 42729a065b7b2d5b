//! Seed derivation for reproducible, independent random streams.
//!
//! Every Monte-Carlo trial owns the stream `master ^ splitmix64(trial)`; every block
//! inside a trial owns `splitmix64(trial_seed) ^ splitmix64(iteration)`. Streams are
//! then expanded with ChaCha8.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `trial`-th independent trial under a master seed.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    master ^ splitmix64(trial)
}

/// Seed of the block drawn at outer iteration `iteration` within a trial.
pub fn block_seed(trial_seed: u64, iteration: u64) -> u64 {
    splitmix64(trial_seed) ^ splitmix64(iteration)
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
