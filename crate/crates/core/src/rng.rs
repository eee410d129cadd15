//! Named, schedule-independent random streams.
//!
//! Every random draw in the pipeline comes from a ChaCha stream keyed by a
//! root seed plus a short list of integers (stage tag, user, item, ...). Two
//! calls with the same key always yield the same stream, regardless of which
//! thread runs them or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags for the named sub-streams of a run.
pub mod tag {
    pub const EMBED: u64 = 0x0065_6d62_6564;
    pub const SAMPLE: u64 = 0x7361_6d70_6c65;
    pub const MASK: u64 = 0x6d61_736b;
    pub const AUGMENT: u64 = 0x6175_676d;
    pub const EVAL: u64 = 0x6576_616c;
    pub const SPLIT: u64 = 0x0073_706c_6974;
    pub const INIT: u64 = 0x696e_6974;
    pub const TRAIN: u64 = 0x0074_7261_696e;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a root seed with a key path into a single 64-bit value.
pub fn mix(seed: u64, key: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for &k in key {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

pub fn stream(seed: u64, key: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(mix(seed, key))
}
