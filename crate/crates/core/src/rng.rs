//! Seed derivation. Every stochastic stage draws from its own stream, keyed by
//! a root seed and a path of labels, so results never depend on evaluation
//! order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derives a child seed from `root` and a label path.
pub fn derive_seed(root: u64, labels: &[&str], indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
    }
    for index in indices {
        hasher.update(index.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(root: u64, labels: &[&str], indices: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, labels, indices))
}
