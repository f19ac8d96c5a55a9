use sha2::{Digest, Sha256};

use crate::data::Subset;

/// First eight bytes of the SHA-256 digest of `parts` joined by `/`.
pub fn derive_seed(parts: &[&str]) -> u64 {
    let digest = Sha256::digest(parts.join("/").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Seed of the labeled/unlabeled split. Method and grade are excluded so every method,
/// including the baseline, sees the same labeled engines in a replication.
pub fn scenario_seed(base: u64, subset: Subset, percent: u32, replication: usize) -> u64 {
    derive_seed(&["scenario", &base.to_string(), subset.name(), &percent.to_string(), &replication.to_string()])
}

/// Seed for initialization and training of one cell.
pub fn training_seed(base: u64, subset: Subset, percent: u32, grade: Option<u32>, replication: usize) -> u64 {
    let grade = grade.map_or_else(|| "-".to_string(), |g| g.to_string());
    derive_seed(&["train", &base.to_string(), subset.name(), &percent.to_string(), &grade, &replication.to_string()])
}
