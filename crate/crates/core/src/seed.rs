//! Deterministic per-item random streams.
//!
//! Every stochastic step draws from a ChaCha8 stream keyed by
//! `SHA-256(le_u64(seed) || 0x00 || stage || 0x00 || item)`, so results do
//! not depend on iteration order or thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_key(seed: u64, stage: &str, item: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([0u8]);
    h.update(stage.as_bytes());
    h.update([0u8]);
    h.update(item.as_bytes());
    h.finalize().into()
}

pub fn stream(seed: u64, stage: &str, item: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_key(seed, stage, item))
}

/// Uniform draw in `[0, 1)` from the top 53 bits of one `u64`.
pub fn unit_f64<R: rand::RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw by the Box-Muller transform (cosine branch).
pub fn standard_normal<R: rand::RngCore>(rng: &mut R) -> f64 {
    let u1 = 1.0 - unit_f64(rng);
    let u2 = unit_f64(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform index in `0..n` by rejection sampling on `u64`.
pub fn index<R: rand::RngCore>(rng: &mut R, n: usize) -> usize {
    assert!(n > 0, "empty range");
    let n = n as u64;
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return (v % n) as usize;
        }
    }
}

/// Fisher-Yates shuffle driven by [`index`].
pub fn shuffle<T, R: rand::RngCore>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = index(rng, i + 1);
        items.swap(i, j);
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}
