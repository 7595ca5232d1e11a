//! Deterministic seed derivation. Every random stream in the crate is a
//! ChaCha8 generator keyed by `(seed, tag)`.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_chacha::ChaCha8Rng;

/// Mix `seed` with a tag into an independent 64-bit seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then two splitmix64 rounds
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(splitmix(seed) ^ h)
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

pub fn std_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}
