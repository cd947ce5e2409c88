//! Seeded random streams.
//!
//! A run seed fans out into independent ChaCha streams, one per consumer, so
//! drawing more numbers in one place never shifts another consumer's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Binarize = 2,
    Sampling = 3,
    Shuffle = 4,
    Regime = 5,
    Data = 6,
    Diagnostics = 7,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
