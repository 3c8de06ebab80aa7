//! Seed derivation for independent random streams.
//!
//! Every source of randomness in a run (parameter init, per-client batch
//! order, data partitioning) gets its own ChaCha stream whose seed is a pure
//! function of a root seed, a stream tag and an index. Streams never share
//! state, so consuming one cannot shift another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Named stream tags.
pub mod tag {
    pub const COMMON_INIT: u64 = 0x01;
    pub const UNIQUE_INIT: u64 = 0x02;
    pub const LATERAL_INIT: u64 = 0x03;
    pub const BATCH: u64 = 0x04;
    pub const LOCAL_INIT: u64 = 0x05;
    pub const CONCAT_INIT: u64 = 0x06;
    pub const SAMPLE_SPLIT: u64 = 0x10;
    pub const CLIENT_PARTITION: u64 = 0x11;
    pub const FEATURE_SPLIT: u64 = 0x12;
    pub const SYNTHETIC: u64 = 0x13;
    pub const CANDIDATES: u64 = 0x14;
    pub const SUBSAMPLE: u64 = 0x15;
    pub const REPEAT: u64 = 0x16;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a tag and an index into a child seed.
pub fn derive_seed(root: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ tag.rotate_left(17)) ^ index.rotate_left(41))
}

pub fn stream(root: u64, tag: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, tag, index))
}
