//! Small shared helpers: hashing and seed derivation.

use crate::error::Result;
use sha2::{Digest, Sha256};
use std::path::Path;

/// Lowercase hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Lowercase hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Derives an independent sub-seed from a global seed and a purpose tag.
///
/// Different tags give statistically independent streams while staying a
/// pure function of the global seed: the first eight little-endian bytes
/// of SHA-256(seed_le || tag).
pub fn derive_seed(global_seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest >= 8 bytes"))
}
