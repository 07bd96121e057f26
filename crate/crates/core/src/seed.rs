//! Stable seed derivation.
//!
//! Everything that has to be reproducible across runs and builds derives its
//! randomness from these helpers rather than from `std::hash`, whose output
//! is not guaranteed between compiler releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine two seeds into one; order matters.
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

/// Seed derived from a sequence of text segments (a root-to-node path).
pub fn hash_path<S: AsRef<str>>(segments: &[S]) -> u64 {
    segments.iter().fold(FNV_OFFSET, |h, s| {
        // 0xff never occurs in UTF-8, so segment boundaries are unambiguous
        let h = s
            .as_ref()
            .bytes()
            .fold(h, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME));
        (h ^ 0xff).wrapping_mul(FNV_PRIME)
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn path_hash_respects_segment_boundaries() {
        assert_ne!(hash_path(&["ab", "c"]), hash_path(&["a", "bc"]));
        assert_eq!(hash_path(&["ab", "c"]), hash_path(&["ab", "c"]));
    }

    #[test]
    fn mix_is_order_sensitive() {
        assert_ne!(mix(1, 2), mix(2, 1));
    }
}
