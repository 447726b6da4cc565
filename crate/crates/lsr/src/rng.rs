//! Seed derivation and deterministic RNG construction.
//!
//! Every source of randomness in a run flows from one root seed, split per
//! purpose ("labels", "batches", "clf", "mock", ...) so that individual
//! stages are independently reproducible and a resumed run draws exactly
//! the same values as an uninterrupted one.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte slice. Used for stable, platform-independent
/// fingerprints (label-space hashes, per-sample mock seeds).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive a child seed from a root seed, a purpose tag, and an index.
pub fn derive_seed(root: u64, purpose: &str, index: u64) -> u64 {
    let mut buf = Vec::with_capacity(16 + purpose.len());
    buf.extend_from_slice(&root.to_le_bytes());
    buf.extend_from_slice(purpose.as_bytes());
    buf.extend_from_slice(&index.to_le_bytes());
    fnv1a64(&buf)
}

/// Deterministic ChaCha8 RNG from a seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
