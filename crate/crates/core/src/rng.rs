//! Seeded randomness. All randomness flows from a root `u64` through
//! [`derive_seed`], so that each component gets an independent stream.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the component named `tag`, derived from `root`.
pub fn derive_seed(root: u64, tag: &str) -> u64 {
    // FNV-1a over the tag bytes
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(root) ^ h)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn component_rng(root: u64, tag: &str) -> Rng {
    rng_from_seed(derive_seed(root, tag))
}
