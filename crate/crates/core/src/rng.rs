//! Seeded random streams. Every consumer derives its own stream from a
//! `(seed, stream)` pair so concurrent runs never share generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent generator for stream `stream` of master seed `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Well-known stream ids.
pub mod streams {
    pub const PROBLEM: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const TEST: u64 = 3;
    pub const VALIDATION: u64 = 4;
    pub const SOLVER: u64 = 5;
    pub const PROBES: u64 = 6;
}
