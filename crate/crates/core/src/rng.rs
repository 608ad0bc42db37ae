//! Seeded random streams.
//!
//! Every stochastic step draws from a ChaCha12 generator. ChaCha is a
//! counter-based cipher: a 256-bit key plus a 64-bit stream id select an
//! independent keystream, and the position inside it is a plain counter.
//!
//! Stream splitting works as follows:
//!
//! * the key is derived from the master seed with `seed_from_u64`
//!   (a PCG32 expansion of the 64-bit seed into 32 bytes);
//! * replicate / resample / attempt `i` uses stream id `i`.
//!
//! Work item `i` therefore sees the same numbers no matter which thread runs
//! it or how many items are scheduled, so results are bit-identical across
//! thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

/// Generator for the root stream of `seed`.
pub fn root(seed: u64) -> StreamRng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Generator for sub-stream `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a child seed, used when a work item needs to hand a plain `u64`
/// seed to a routine that builds its own generator.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    use rand::RngCore;
    stream(seed, index).next_u64()
}
