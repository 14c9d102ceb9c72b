//! Named, independently seeded random streams.
//!
//! Every consumer of randomness in a run draws from its own ChaCha stream, so
//! adding a consumer (e.g. the generator) never perturbs another (e.g. the
//! data shuffle). This is what makes PAD runs with every term disabled replay
//! baseline runs exactly.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    PadDropout = 4,
    GeneratorInit = 5,
    GeneratorNoise = 6,
    SubsetSize = 7,
    Eval = 8,
    Split = 9,
    Cluster = 10,
    Data = 11,
    Holdout = 12,
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Seed of the `index`-th independent member of a run (ensemble member,
/// repeated split). Member 0 keeps the run seed.
pub fn member_seed(seed: u64, index: usize) -> u64 {
    if index == 0 {
        return seed;
    }
    // splitmix64 finalizer
    let mut z = seed.wrapping_add((index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
