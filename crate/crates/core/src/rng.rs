//! Seeded random streams.
//!
//! Every stochastic operation takes a [`DiffusionSeed`] by `&mut` and
//! advances it. Independent streams for batch work are derived from a master
//! seed plus a key, so parallel and serial runs draw the same numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::feature_map::FeatureMap;

#[derive(Debug, Clone)]
pub struct DiffusionSeed {
    seed: u64,
    rng: ChaCha8Rng,
}

impl DiffusionSeed {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// An independent stream keyed by `(master, stream)`.
    pub fn stream(master: u64, stream: u64) -> Self {
        Self::new(mix64(master ^ mix64(stream.wrapping_add(0x9e37_79b9_7f4a_7c15))))
    }

    /// An independent stream keyed by a sequence of string parts.
    pub fn keyed(master: u64, parts: &[&str]) -> Self {
        Self::stream(master, key_hash(parts))
    }

    pub fn initial_seed(&self) -> u64 {
        self.seed
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `0..=upper`.
    pub fn index_inclusive(&mut self, upper: usize) -> usize {
        self.rng.random_range(0..=upper)
    }

    /// A `frames × bins` map of i.i.d. standard normal draws.
    pub fn normal_map(&mut self, frames: usize, bins: usize) -> FeatureMap {
        let values = (0..frames * bins).map(|_| self.normal()).collect();
        FeatureMap::from_vec_unchecked(frames, bins, values)
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the parts, with a separator byte so `["ab","c"]` and
/// `["a","bc"]` hash differently.
pub fn key_hash(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in part.bytes().chain(std::iter::once(0xff)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}
