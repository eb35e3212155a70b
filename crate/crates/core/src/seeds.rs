//! Named seed substreams.

use sha2::{Digest, Sha256};

/// Seed for the stream `name` derived from `root`.
pub fn substream(root: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Cheap keyed mix of three words (splitmix64 finalizer chain), used where
/// a seed is needed per node.
pub fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut x = a;
    for w in [b, c] {
        x = splitmix(x ^ splitmix(w));
    }
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_differ_and_repeat() {
        assert_eq!(substream(7, "train"), substream(7, "train"));
        assert_ne!(substream(7, "train"), substream(7, "prune"));
        assert_ne!(substream(7, "train"), substream(8, "train"));
        assert_ne!(mix(1, 2, 3), mix(1, 3, 2));
        assert_eq!(mix(1, 2, 3), mix(1, 2, 3));
    }
}
