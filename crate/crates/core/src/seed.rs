//! Deterministic seed derivation.
//!
//! Every stochastic stage derives its seed from `(master, stage, index)` so that
//! stages can be rerun independently and still agree bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives a child seed from a parent seed, a stage label and an index.
pub fn derive(master: u64, stage: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((stage.len() as u64).to_le_bytes());
    hasher.update(stage.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Hex SHA-256 digest of arbitrary bytes, used for config and artifact hashes.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short hash of a value's JSON encoding.
pub fn hash_json<T: serde::Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    digest_hex(&bytes)[..16].to_string()
}
