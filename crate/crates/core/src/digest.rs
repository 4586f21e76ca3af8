//! Stable 64-bit content digests.
//!
//! Trace records carry a digest of the pre-transition state so that replays
//! can be checked cheaply without storing every full state. FNV-1a is used
//! because it is trivially portable and stable across releases, unlike the
//! std hasher.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Digest rendered as 16 lowercase hex characters, the form stored in trace
/// records.
pub fn hex16(value: u64) -> String {
    format!("{value:016x}")
}

/// Digest of any serializable value via its canonical JSON encoding.
/// Canonical here means serde's struct-order encoding, which is
/// deterministic for the types this crate serializes.
pub fn digest_json<T: serde::Serialize>(value: &T) -> u64 {
    let encoded = serde_json::to_vec(value).expect("serializable value");
    fnv1a64(&encoded)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn hex_rendering_is_fixed_width() {
        assert_eq!(hex16(0), "0000000000000000");
        assert_eq!(hex16(0xdeadbeef), "00000000deadbeef");
        assert_eq!(hex16(u64::MAX), "ffffffffffffffff");
        assert_eq!(hex16(1).len(), 16);
    }
}
