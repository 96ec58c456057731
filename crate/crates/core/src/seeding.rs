//! Stable derivation of child seeds.

use sha2::{Digest, Sha256};

/// Hashes `base` and `parts` into a new seed. The result only depends on
/// the inputs, never on how many other seeds were derived.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
