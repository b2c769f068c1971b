//! Deterministic seed derivation.
//!
//! All randomness in a run flows from one master seed. Sub-stage seeds are
//! derived by hashing the master seed together with a stage label, so they
//! are stable across machines and insensitive to the order in which stages
//! consume them.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a sub-seed from a master seed and a stage label.
pub fn derive(master: u64, label: &str) -> u64 {
    splitmix64(splitmix64(master) ^ fnv1a(label))
}

/// Seeded RNG for a stage.
pub fn rng(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, label))
}
