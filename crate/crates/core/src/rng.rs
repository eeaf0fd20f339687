//! Keyed random streams.
//!
//! Every random draw in the simulator is addressed by `(seed, stream, index)`
//! so results do not depend on evaluation order. Parallel or tiled evaluation
//! therefore reproduces sequential runs bit for bit.

use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;

/// Stream tags separating independent consumers of the same master seed.
pub mod tag {
    pub const POSE: u64 = 0x706f_7365;
    pub const DEPTH: u64 = 0x6465_7074;
    pub const VIEW_LABEL: u64 = 0x7669_6577;
    pub const MAP_LABEL: u64 = 0x6d61_7000;
    pub const TRAJECTORY: u64 = 0x7472_616a;
    pub const TRAIN: u64 = 0x7472_6169;
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a list of key words into a single 64-bit key.
pub fn mix_key(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, &w| splitmix(acc ^ splitmix(w)))
}

/// Generator for one `(seed, stream, index)` address.
pub fn stream_rng(seed: u64, stream: u64, index: u64) -> Pcg64Mcg {
    Pcg64Mcg::seed_from_u64(mix_key(&[seed, stream, index]))
}

/// Uniform draw in `[0, 1)` addressed by key and lane, without constructing a generator.
#[inline]
pub fn unit_draw(key: u64, lane: u64) -> f64 {
    let bits = splitmix(key ^ splitmix(lane.wrapping_add(0x5851_f42d_4c95_7f2d)));
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
