//! Seeded generator streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream derived from the
//! run seed plus a path of integer tags (purpose, epoch, item, ...). Streams for
//! different tag paths are independent, so results do not depend on the order
//! in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Tags separating the purposes a run seed is used for.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const ANCHORS: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const BATCH_ORDER: u64 = 4;
    pub const AUGMENT: u64 = 5;
    pub const SYNTHETIC: u64 = 6;
    pub const INIT_STATS: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for `seed` and the given tag path.
pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    let key = tags
        .iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)));
    ChaCha8Rng::seed_from_u64(key)
}
