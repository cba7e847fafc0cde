//! Seeded random streams.
//!
//! Every run is driven by one 64-bit seed. Independent sub-streams are split
//! off per purpose (and per member index where several chains or ensemble
//! members run side by side), so adding draws in one place never shifts the
//! draws seen elsewhere.

use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

pub type UqRng = ChaCha12Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Init = 1,
    Noise = 2,
    Sampler = 3,
    Dropout = 4,
    Minibatch = 5,
    Data = 6,
    Split = 7,
    Predict = 8,
}

pub fn stream(seed: u64, purpose: Purpose) -> UqRng {
    indexed_stream(seed, purpose, 0)
}

pub fn indexed_stream(seed: u64, purpose: Purpose, index: u64) -> UqRng {
    let mut rng = UqRng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 40) | index);
    rng
}
