//! Named, seed-derived random streams.
//!
//! Every random draw in the crate comes from a stream derived from one
//! master seed and a stream name (plus an optional index for worker or
//! chunk sub-streams). No ambient entropy is used anywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stream `name` of master seed `seed`.
pub fn stream(seed: u64, name: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(fnv1a(name))))
}

/// Sub-stream `index` of stream `name`. Distinct indices give independent streams.
pub fn substream(seed: u64, name: &str, index: u64) -> StreamRng {
    let mut rng = stream(seed, name);
    rng.set_stream(index);
    rng
}
