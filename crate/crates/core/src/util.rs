use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of a byte slice. Used for content hashes on corpora,
/// checkpoints, configs, and report files.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Stable 64-bit hash of a string, for deriving per-item sub-seeds.
pub(crate) fn seed_hash(s: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(s.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
