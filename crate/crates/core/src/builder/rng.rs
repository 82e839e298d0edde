//! Versioned, keyed random streams.
//!
//! Every stream is a ChaCha8 generator whose 32-byte seed is the SHA-256 of
//! (generator name, global seed, purpose, key). Sampling helpers consume raw
//! `u64`s with a fixed algorithm so output depends only on this module, not
//! on the sampling routines of any external crate version.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

/// Recorded in every probe fingerprint; bump when any sequence changes.
pub const RNG_NAME: &str = "chacha8-sha256-keyed/v1";

pub fn stream(seed: u64, purpose: &str, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(RNG_NAME.as_bytes());
    h.update([0]);
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update([0]);
    h.update(key.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Uniform integer in `0..n` by rejection; `n` must be positive.
pub fn below<R: RngCore>(rng: &mut R, n: usize) -> usize {
    assert!(n > 0, "empty range");
    let n = n as u64;
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return (x % n) as usize;
        }
    }
}

/// Uniform float in `[0, 1)` with 53 bits of precision.
pub fn unit<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// `count` distinct items, uniformly, in random order (partial Fisher-Yates).
pub fn sample<T: Clone, R: RngCore>(items: &[T], count: usize, rng: &mut R) -> Vec<T> {
    let mut pool = items.to_vec();
    let count = count.min(pool.len());
    for i in 0..count {
        let j = i + below(rng, pool.len() - i);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}
