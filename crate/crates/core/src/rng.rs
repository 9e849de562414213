//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha stream derived from a user
//! seed and a fixed stream label, so that weight initialisation and batch
//! shuffling never share state and results are identical across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derive an independent stream for `(seed, label)`.
pub fn stream(seed: u64, label: &str) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}
