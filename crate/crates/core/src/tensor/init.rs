//! Deterministic seeded initialization.
//!
//! Values are drawn in `f64` from a ChaCha8 stream and then cast, so an
//! `f32` and an `f64` tensor built from the same seed hold the same numbers
//! up to rounding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Real, Tensor};

/// Derives a stable per-parameter seed from a base seed and a name (FNV-1a).
pub fn named_seed(base: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base;
    for byte in name.bytes().chain(base.to_le_bytes()) {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[lo, hi)`.
pub fn uniform_range<T: Real>(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<T> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| T::from_f64(r.random_range(lo..hi)))
}

/// Uniform values in `[-bound, bound)`.
pub fn uniform<T: Real>(shape: &[usize], bound: f64, seed: u64) -> Tensor<T> {
    uniform_range(shape, -bound, bound, seed)
}

/// Uniform in `±1/sqrt(fan_in)` where `fan_in` is the product of all axes
/// after the leading (output channel) one.
pub fn fan_in_uniform<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
    uniform(shape, 1.0 / (fan_in as f64).sqrt(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values() {
        let a = uniform::<f32>(&[4, 4], 1.0, 3);
        let b = uniform::<f32>(&[4, 4], 1.0, 3);
        assert_eq!(a, b);
        assert_ne!(a, uniform::<f32>(&[4, 4], 1.0, 4));
    }

    #[test]
    fn named_seeds_differ() {
        assert_ne!(named_seed(1, "conv1"), named_seed(1, "conv2"));
        assert_ne!(named_seed(1, "conv1"), named_seed(2, "conv1"));
        assert_eq!(named_seed(7, "x"), named_seed(7, "x"));
    }

    #[test]
    fn fan_in_bound_respected() {
        let w = fan_in_uniform::<f64>(&[3, 4, 5, 5], 11);
        let bound = 1.0 / 100f64.sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }
}
