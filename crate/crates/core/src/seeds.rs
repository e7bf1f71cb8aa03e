//! Labeled seed derivation: every random stream hangs off one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the sub-stream `label` of `root`. Stable across platforms and releases.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix(root ^ mix(h))
}

/// Seed for an indexed sub-stream, e.g. `("channel", [epoch, batch])`.
pub fn derive_indexed(root: u64, label: &str, idx: &[u64]) -> u64 {
    idx.iter().fold(derive_seed(root, label), |acc, &i| mix(acc ^ mix(i)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
