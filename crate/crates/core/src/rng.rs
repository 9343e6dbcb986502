//! Seeded per-item random streams.
//!
//! Every pixel (and every trial) draws from its own generator derived from
//! `(seed, stream, index)`, so results do not depend on the order in which
//! workers visit items.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Well-known stream tags, kept distinct so unrelated passes never share variates.
pub mod stream {
    pub const PROBE: u64 = 1;
    pub const REFERENCE: u64 = 2;
    pub const UNIFORM: u64 = 3;
    pub const PROPOSAL_SAMPLES: u64 = 4;
    pub const TRAINING: u64 = 5;
    pub const INIT: u64 = 6;
    pub const BENCH_TRIAL: u64 = 7;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ stream) ^ index)
}

pub fn stream_rng(seed: u64, stream: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, stream, index))
}
