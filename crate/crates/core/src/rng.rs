//! Seeded random streams.
//!
//! Every consumer derives its generator from a master seed and a stream
//! number: `ChaCha8Rng::seed_from_u64(seed)` followed by `set_stream(stream)`.
//! Streams never overlap, so adding a consumer does not perturb the others.
//! Simulation replicate `r` uses streams `8r..8r + 8` of the master seed,
//! one per [`Purpose`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a replicate stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Precision = 0,
    Data = 1,
    PriorCorruption = 2,
    Folds = 3,
    Mcmc = 4,
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for one purpose within one replicate.
pub fn replicate_rng(seed: u64, replicate: u64, purpose: Purpose) -> ChaCha8Rng {
    stream_rng(seed, replicate * 8 + purpose as u64)
}

/// A 64-bit seed drawn from a replicate stream, for APIs that take a seed.
pub fn replicate_seed(seed: u64, replicate: u64, purpose: Purpose) -> u64 {
    use rand::RngCore;
    replicate_rng(seed, replicate, purpose).next_u64()
}
