//! Seedable, splittable random streams.
//!
//! Every consumer of randomness draws from a ChaCha8 stream identified by
//! `(seed, purpose, index)`. ChaCha is counter based, so a stream can be
//! reconstructed from its coordinates alone; training never has to persist
//! generator state to resume bit-exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purposes get disjoint stream ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Batch = 2,
    Patches = 3,
    Synthetic = 4,
    Power = 5,
    Test = 6,
}

pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: Stream, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(((stream as u64) << 48) | (index & 0xffff_ffff_ffff));
        SeededRng { inner }
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1: f64 = 1.0 - self.inner.gen::<f64>();
        let u2: f64 = self.inner.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn uniform_vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }
}
