//! Random-stream conventions.
//!
//! Every generator is ChaCha8 (`rand_chacha::ChaCha8Rng`) keyed by a 64-bit
//! seed via `seed_from_u64`, with a ChaCha stream id separating the purposes
//! a single seed may serve. Normal variates come from
//! `rand_distr::StandardNormal` (ziggurat method). Results are reproducible
//! within this implementation; no cross-implementation bit compatibility is
//! promised.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids. Feature `j` and the noise column may share a numeric seed,
/// so they must never share a stream.
pub mod stream {
    pub const FEATURE: u64 = 0;
    pub const NOISE: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const SAMPLING: u64 = 4;
    pub const TRIALS: u64 = 5;
}

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
