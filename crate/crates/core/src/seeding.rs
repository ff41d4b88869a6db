//! Seed derivation. Every stage draws from its own stream derived from a
//! single root seed, so stages can be re-run in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a child seed from `root` and a label such as `"collect-dq/circle"`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&out[..8]);
    u64::from_le_bytes(b)
}

/// Seed of the `index`-th episode within a stage.
pub fn episode_seed(stage_seed: u64, index: usize) -> u64 {
    derive_seed(stage_seed, &format!("episode/{index}"))
}
