//! Seed derivation shared by every stage.
//!
//! A stage seed is `splitmix64(master ^ fnv1a64(label))`; per-record seeds are
//! derived from a stage seed and the record index, so results never depend on
//! evaluation order.

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET_BASIS;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Incremental FNV-1a hasher, used for content hashes of large artifacts.
#[derive(Clone, Debug)]
pub struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Fnv1a(FNV_OFFSET_BASIS)
    }
}

impl Fnv1a {
    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named pipeline stage.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    splitmix64(master ^ fnv1a64(stage.as_bytes()))
}

/// Seed for the `index`-th item processed under `seed`.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x6a09_e667_f3bc_c909)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_of_empty_is_offset_basis() {
        assert_eq!(fnv1a64(b""), 14695981039346656037);
    }

    #[test]
    fn fnv_known_vectors() {
        // Reference values from the FNV test suite.
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
        let mut h = Fnv1a::default();
        h.update(b"foo");
        h.update(b"bar");
        assert_eq!(h.finish(), fnv1a64(b"foobar"));
    }

    #[test]
    fn stage_seeds() {
        assert_eq!(derive_seed(7, "rollout"), derive_seed(7, "rollout"));
        assert_ne!(derive_seed(7, "rollout"), derive_seed(7, "simulate"));
        assert_ne!(derive_seed(7, "rollout"), derive_seed(8, "rollout"));
        assert_eq!(derive_seed(7, "x"), splitmix64(7 ^ fnv1a64(b"x")));
    }

    #[test]
    fn splitmix_reference() {
        // First outputs of the reference SplitMix64 generator seeded with 0.
        assert_eq!(splitmix64(0), 0xe220a8397b1dcdaf);
    }
}
