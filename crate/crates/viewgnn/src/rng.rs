//! Deterministic RNG substreams.
//!
//! Every source of randomness in training and evaluation is a named
//! substream derived from the run seed, so adding or reordering one consumer
//! never perturbs another. The derivation hashes `(seed, name, indices)`
//! with SHA-256 and seeds a ChaCha20 stream from the digest.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

fn digest(seed: u64, name: &str, indices: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    h.update((indices.len() as u64).to_le_bytes());
    for ix in indices {
        h.update(ix.to_le_bytes());
    }
    let out = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&out);
    bytes
}

/// An independent RNG for the substream `(name, indices)` of `seed`.
pub fn substream_rng(seed: u64, name: &str, indices: &[u64]) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(digest(seed, name, indices))
}

/// A derived `u64` seed for the substream `(name, indices)` of `seed`,
/// for APIs that take a seed rather than an RNG.
pub fn substream_seed(seed: u64, name: &str, indices: &[u64]) -> u64 {
    let bytes = digest(seed, name, indices);
    u64::from_le_bytes(bytes[..8].try_into().expect("digest is 32 bytes"))
}
