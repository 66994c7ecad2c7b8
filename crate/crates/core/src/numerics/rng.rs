use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream identifiers used across the crate, so that independent consumers of
/// one seed never share a keystream.
pub mod streams {
    pub const QUANTISER_INIT: u64 = 1;
    pub const QUANTISER_BATCHES: u64 = 2;
    pub const SYNTH_MEANS: u64 = 3;
    pub const SYNTH_CHAIN: u64 = 4;
    pub const SYNTH_NOISE: u64 = 5;
    pub const MASK: u64 = 6;
    pub const STUDENT_INIT: u64 = 7;
    pub const PRETRAIN_BATCHES: u64 = 8;
    pub const EVAL: u64 = 9;
}

/// Seeded ChaCha8 generator keyed by `(seed, stream)`.
///
/// Integer draws go through 64-bit sampling so streams do not depend on the
/// platform's pointer width.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Derives an independent generator, e.g. one per sequence or per step.
    pub fn fork(&mut self, stream: u64) -> Self {
        Self::new(self.next_u64(), stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below(0)");
        self.inner.random_range(0..n as u64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.uniform() < p
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
