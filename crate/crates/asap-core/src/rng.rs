//! Seeded randomness. Every source of randomness in the crate flows from an
//! explicit u64 seed through ChaCha8, so runs are reproducible bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Scalar;

pub type SeedRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a named component, so adding a consumer
/// does not shift the draws of the others.
pub fn substream(seed: u64, label: &str) -> SeedRng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &byte in label.as_bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Samples are drawn in f64 and narrowed, so f32 and f64 models built from
/// the same seed agree to rounding.
pub fn normal<T: Scalar>(rng: &mut SeedRng, std: f64) -> T {
    let dist = Normal::new(0.0, std).expect("std must be finite and positive");
    T::from_f64(dist.sample(rng))
}

/// He-style scale for a fan-in of `fan_in`.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in.max(1) as f64).sqrt()
}

pub fn fill_normal<T: Scalar>(rng: &mut SeedRng, std: f64, out: &mut [T]) {
    let dist = Normal::new(0.0, std).expect("std must be finite and positive");
    for slot in out {
        *slot = T::from_f64(dist.sample(rng));
    }
}
