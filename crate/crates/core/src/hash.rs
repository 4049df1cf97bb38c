//! Content addressing for cached embeddings and run configs.

use sha2::{Digest, Sha256};

/// SHA-256 (lowercase hex) of `len(model_id) as u64 LE || model_id || payload`.
///
/// The length prefix keeps `("ab", "c")` and `("a", "bc")` apart.
pub fn content_key(model_id: &str, payload: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update((model_id.len() as u64).to_le_bytes());
    hasher.update(model_id.as_bytes());
    hasher.update(payload);
    hex::encode(hasher.finalize())
}

/// Canonical request bytes for a token sequence: decimal ids joined by
/// commas, no spaces, UTF-8.
pub fn token_payload(ids: &[u32]) -> Vec<u8> {
    let mut out = String::with_capacity(ids.len() * 6);
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&id.to_string());
    }
    out.into_bytes()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
