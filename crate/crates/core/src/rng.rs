//! Seeded random streams.
//!
//! A run owns one logical seed. Each consuming module draws from its own
//! ChaCha stream derived from that seed, so extra draws in one module never
//! shift the sequence seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The independent random streams of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Channel = 1,
    Traffic = 2,
    Mobility = 3,
    Broker = 4,
}

/// Returns the generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
