//! Stable hashing helpers used for request fingerprints and cache keys.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        write!(out, "{byte:02x}").expect("writing to a String cannot fail");
    }
    out
}

/// Canonical JSON for hashing: `serde_json::Value` keeps object keys in
/// sorted order, so serializing a `Value` yields a stable byte sequence.
pub fn canonical_value_hash(value: &serde_json::Value) -> String {
    sha256_hex(serde_json::to_string(value).expect("JSON values serialize").as_bytes())
}
