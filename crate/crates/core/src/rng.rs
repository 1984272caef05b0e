//! Named random streams derived from a single root seed.
//!
//! Every consumer of randomness asks for `stream(root, purpose, index)`;
//! the stream seed is the SHA-256 digest of the three values, so streams
//! are independent of evaluation order and thread schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn stream(root: u64, purpose: &str, index: u64) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(seed)
}

/// Derive a child root seed, for handing a whole subsystem its own seed space.
pub fn child_seed(root: u64, purpose: &str, index: u64) -> u64 {
    use rand::RngCore;
    stream(root, purpose, index).next_u64()
}
