//! Stable seed derivation. Every random stream in the crate is a ChaCha8
//! generator keyed by a SHA-256 digest of its context, so streams do not
//! depend on call order or on the platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from a base seed and a list of labels.
pub fn derive(seed: u64, labels: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for label in labels {
        h.update((label.len() as u64).to_le_bytes());
        h.update(label);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn rng(seed: u64, labels: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, labels))
}
