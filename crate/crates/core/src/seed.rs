//! Deterministic seed derivation. Every random draw in the harness goes
//! through ChaCha8 seeded from SHA-256 digests, so results are identical
//! across platforms and thread schedules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// Hashes a sequence of byte strings (length-prefixed) into a 64-bit seed.
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform integer in `0..bound` by rejection sampling on raw `u64` draws.
pub fn uniform_below(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    use rand::RngCore;
    assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return v % bound;
        }
    }
}

pub fn gaussian_vector(seed: u64, dim: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..dim).map(|_| StandardNormal.sample(&mut r)).collect()
}

pub fn unit_vector(seed: u64, dim: usize) -> Vec<f64> {
    let mut v = gaussian_vector(seed, dim);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}
