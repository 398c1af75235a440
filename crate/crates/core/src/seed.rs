//! Counter-based derivation of independent random streams from one master seed.
//!
//! A stream is identified by `(master, tag, index)`. Streams for different
//! indices never depend on each other, so growing the number of tables leaves
//! the existing ones untouched.

use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;

/// Random stream type used throughout the crate.
pub type Rng = Pcg64Mcg;

pub const TAG_TABLE: u64 = 0x7461_626c;
pub const TAG_QUERY: u64 = 0x7175_6572;
pub const TAG_BENCH: u64 = 0x6265_6e63;
pub const TAG_VERIFY: u64 = 0x7665_7269;
pub const TAG_CLASS: u64 = 0x636c_6173;
pub const TAG_CENTERS: u64 = 0x6365_6e74;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of stream `index` within component `tag`.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ tag) ^ index)
}

pub fn stream(master: u64, tag: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, tag, index))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
