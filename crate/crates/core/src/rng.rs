//! Seed handling. Every stochastic routine takes an explicit seed; replications
//! use ChaCha streams so results do not depend on scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Generator for stream `stream` under master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A child seed for sub-task `k`, stable across thread counts.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    stream_rng(seed, k.wrapping_add(1)).next_u64()
}
