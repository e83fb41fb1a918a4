//! Seeded randomness.
//!
//! Every random draw comes from ChaCha8 (`rand_chacha`), seeded once from the
//! run seed and split into independent streams per purpose, so changing how
//! much randomness one component consumes never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    EvalSubsample = 3,
    Forest = 4,
    Embedding = 5,
    Data = 6,
}

pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    indexed_stream(seed, purpose, 0)
}

/// One of 2³² sub-streams of `purpose`, e.g. one per epoch so that a resumed
/// run shuffles exactly as an uninterrupted one.
pub fn indexed_stream(seed: u64, purpose: Stream, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | index as u64);
    rng
}
