//! Seed fan-out.
//!
//! A single user seed drives every random decision. Each consumer draws from
//! its own ChaCha8 stream: the 64-bit seed picks the key and [`Stream`] picks
//! the stream id, so adding draws to one consumer never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 0,
    Shuffle = 1,
    Masking = 2,
    Dropout = 3,
    Split = 4,
    HeadInit = 5,
    GradCheck = 6,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
