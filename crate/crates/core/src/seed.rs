//! Deterministic seed hierarchy.
//!
//! Child seeds are derived from a parent seed and a label with a SplitMix64
//! finalizer, so a trial's graph, transform, messages and coefficients can be
//! varied independently without disturbing each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of child `index` under `parent`.
pub fn child(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Derives a seed for a named purpose (graph, phi, messages, ...).
pub fn purpose(parent: u64, label: &str) -> u64 {
    // FNV-1a over the label keeps the mapping stable across platforms.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    child(parent, h)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_differ() {
        assert_ne!(child(7, 0), child(7, 1));
        assert_ne!(purpose(7, "graph"), purpose(7, "phi"));
        assert_eq!(purpose(7, "graph"), purpose(7, "graph"));
    }
}
