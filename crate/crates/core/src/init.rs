//! Seeded parameter initialization.
//!
//! Each parameter draws from its own stream keyed by `(seed, name)`, so a
//! parameter's initial value does not depend on which other parameters exist.
//! Two models that differ only in their attention blocks therefore start from
//! the same backbone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{numel, Tensor};

pub fn stream_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.rotate_left(17);
    for b in tag.bytes().chain(seed.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn rng_for(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, tag))
}

/// `mean + N(0, std²)` entries; `std == 0` gives an exact constant.
pub fn normal(seed: u64, name: &str, shape: &[usize], mean: f64, std: f64) -> Tensor {
    let n = numel(shape);
    let data = if std > 0.0 {
        let mut rng = rng_for(seed, name);
        let dist = Normal::new(0.0, std).expect("finite std");
        (0..n).map(|_| mean + dist.sample(&mut rng)).collect()
    } else {
        vec![mean; n]
    };
    Tensor::new(shape, data).expect("shape")
}
