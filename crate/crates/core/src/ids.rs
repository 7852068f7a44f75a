//! Content-derived identifiers.

use sha2::{Digest, Sha256};

const SEPARATOR: u8 = 0x1f;

/// Hashes `parts` under `namespace` and renders `tag` followed by the first
/// 16 hex digits of the SHA-256 digest.
pub(crate) fn content_id(tag: char, namespace: &str, parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(namespace.as_bytes());
    for part in parts {
        hasher.update([SEPARATOR]);
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut id = String::with_capacity(17);
    id.push(tag);
    for byte in &digest[..8] {
        id.push_str(&format!("{byte:02x}"));
    }
    id
}

/// Full hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
