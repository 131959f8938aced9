//! All randomness goes through ChaCha8 streams. Derived seeds come from
//! `derive(seed, stream)`, a SplitMix64 mix of the parent seed and a stream
//! tag, so sub-streams are independent of call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Stream tags used across the crate.
pub mod stream {
    pub const MAP: u64 = 1;
    pub const AGENTS: u64 = 2;
    pub const EPISODE: u64 = 3;
    pub const ACTIONS: u64 = 4;
    pub const LEARNER: u64 = 5;
    pub const TUNE: u64 = 6;
    pub const ORACLE: u64 = 7;
    pub const WORKER: u64 = 8;
}
