//! Deterministic seed derivation.
//!
//! Every random decision in the crate draws from a stream derived from the
//! run's root seed plus a purpose string and numeric ids. Derivation hashes
//! the triple with SHA-256, so distinct purposes get statistically
//! independent streams and results are reproducible bit-for-bit across runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a sub-seed from `(root, purpose, ids)`.
pub fn derive_seed(root: u64, purpose: &str, ids: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update([purpose.len() as u8]);
    hasher.update(purpose.as_bytes());
    for id in ids {
        hasher.update(id.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// RNG seeded from a derived sub-seed.
pub fn rng_for(root: u64, purpose: &str, ids: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, purpose, ids))
}
