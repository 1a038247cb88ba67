//! Splittable, reproducible random streams.
//!
//! One master seed fans out into independent substreams through the
//! SplitMix64 mixing function; every simulation run, sensor, and Monte Carlo
//! shard owns exactly one substream, so results are bit-identical no matter
//! how work is scheduled across threads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// SplitMix64 output function: the fixed 64-bit mixing step used to derive
/// substream keys from a parent key and a label.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives the key of substream `label` under `parent` key.
pub fn derive_key(parent: u64, label: u64) -> u64 {
    mix64(parent ^ mix64(label.wrapping_add(0xa0761d6478bd642f)))
}

/// An owned random stream. Cloning is deliberately not provided: each stream
/// has exactly one consumer; fresh independent streams come from `substream`.
#[derive(Debug)]
pub struct RandomSource {
    key: u64,
    rng: ChaCha12Rng,
}

impl RandomSource {
    /// Root stream for a master seed.
    pub fn from_seed(seed: u64) -> Self {
        RandomSource {
            key: seed,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from this stream's key and a label.
    /// Derivation never consumes draws from the parent.
    pub fn substream(&self, label: u64) -> RandomSource {
        RandomSource::from_seed(derive_key(self.key, label))
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn standard_normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }
}
