//! Deterministic RNG construction.
//!
//! Every random quantity is drawn from a ChaCha8 stream keyed by `(seed, purpose)`,
//! so a dataset and a network built from the same seed never share draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 0,
    Augment = 1,
    Init = 2,
    Probe = 3,
    Subsample = 4,
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
