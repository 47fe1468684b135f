//! Deterministic seed splitting.
//!
//! Every random stream in a run is derived from one root seed plus a
//! component tag and an index, so components never share generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `root`, a component tag and an index.
pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag keeps derivation stable across platforms.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(root ^ h).wrapping_add(splitmix64(index)))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(root: u64, tag: &str, index: u64) -> ChaCha8Rng {
    rng_from(derive_seed(root, tag, index))
}
