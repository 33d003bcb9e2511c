//! Deterministic random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (the `rand_chacha`
//! implementation), a counter-based stream cipher generator. A stream is
//! fully determined by its 64-bit seed, expanded to a 256-bit key by
//! `SeedableRng::seed_from_u64` (PCG32 key schedule). Gaussian variates use
//! the ziggurat sampler of `rand_distr::StandardNormal`. Loops that draw
//! many independent samples give sample `i` its own stream seeded with
//! `base_seed + i`, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed of the `index`-th sub-stream of `base`.
pub fn sub_seed(base: u64, index: u64) -> u64 {
    base.wrapping_add(index)
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_normal(rng: &mut Rng, out: &mut [f64]) {
    for x in out.iter_mut() {
        *x = StandardNormal.sample(rng);
    }
}

pub fn normal_vec(rng: &mut Rng, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    fill_normal(rng, &mut v);
    v
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(rng: &mut Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
