//! Named random streams derived from one master seed.
//!
//! Every consumer of randomness (data order, permutation branch, permutation
//! shuffle, condition dropout, init, sampling) gets its own ChaCha stream keyed
//! by `(seed, stream, index)`. Turning one feature off never shifts the draws
//! of another, and a training run can resume from a step counter alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Init,
    DataOrder,
    OrderBranch,
    OrderShuffle,
    CondDropout,
    Dropout,
    Grids,
    Sampling,
    Probe,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init => 0x494e_4954,
            Stream::DataOrder => 0x4441_5441,
            Stream::OrderBranch => 0x4252_4e43,
            Stream::OrderShuffle => 0x5348_5546,
            Stream::CondDropout => 0x4452_4f50,
            Stream::Dropout => 0x4d41_534b,
            Stream::Grids => 0x4752_4944,
            Stream::Sampling => 0x5341_4d50,
            Stream::Probe => 0x5052_4f42,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic stream for `(seed, stream, index)`.
pub fn stream(seed: u64, which: Stream, index: u64) -> Rng {
    let key = splitmix(splitmix(splitmix(seed) ^ which.tag()) ^ index);
    ChaCha8Rng::seed_from_u64(key)
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
