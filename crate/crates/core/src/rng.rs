//! Named, seed-derived random sub-streams.
//!
//! Every stochastic stage draws from its own ChaCha8 stream keyed by
//! `(master seed, stream name, unit index)`, so adding or removing one stage
//! never shifts the draws of another, and parallel units are reproducible
//! regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const SPLIT: &str = "split";
pub const OVERSAMPLE: &str = "oversample";
pub const FOREST: &str = "forest";
pub const CV: &str = "cv";
pub const TEST_SET: &str = "test-set";
pub const SAMPLING: &str = "sampling";
pub const SVM: &str = "svm";

pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    indexed_substream(seed, name, 0)
}

pub fn indexed_substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_key(seed, name, index))
}

/// Derive a plain `u64` seed for APIs that take one (e.g. `SplitSpec`).
pub fn derive_seed(seed: u64, name: &str, index: u64) -> u64 {
    let key = derive_key(seed, name, index);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}

fn derive_key(seed: u64, name: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update([0u8]);
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}
