//! Stable hashing helpers.
//!
//! Everything here must be reproducible across processes and platforms, so
//! std's randomized hashers are off limits. FNV-1a covers seeded tie-breaking
//! and stream derivation; SHA-256 covers cache keys and config fingerprints.

use sha2::{Digest, Sha256};

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// Seeded 64-bit FNV-1a over the given parts with separators.
pub fn stable_hash(seed: u64, parts: &[&str]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
    for part in parts {
        for &b in part.as_bytes() {
            h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
        }
        // separator byte so ("ab","c") != ("a","bc")
        h = (h ^ 0x1f).wrapping_mul(FNV_PRIME);
    }
    h
}

/// Lowercase hex SHA-256 of the given byte chunks.
pub fn sha256_hex(chunks: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for c in chunks {
        hasher.update(c);
        hasher.update([0x1f]);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
