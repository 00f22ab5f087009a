//! Seeded random number generation.
//!
//! Everything stochastic in this crate draws from a [`Prng`] that is
//! constructed from an explicit `u64` seed, so any run can be replayed
//! bit for bit. Independent subsystems (data loading, noise injection,
//! weight init) take split children rather than sharing one stream,
//! which keeps their draws decoupled when one of them changes how much
//! randomness it consumes.

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct Prng {
    inner: ChaCha8Rng,
}

impl Prng {
    pub fn seed_from(seed: u64) -> Self {
        Prng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derives an independent child generator. The child is a pure
    /// function of the parent state, and the parent advances, so
    /// repeated splits yield distinct children.
    pub fn split(&mut self) -> Prng {
        let mut seed = [0u8; 32];
        self.inner.fill_bytes(&mut seed);
        Prng {
            inner: ChaCha8Rng::from_seed(seed),
        }
    }

    /// Child generator keyed by a label, for streams that must not
    /// depend on how many unlabelled splits happened before them.
    pub fn split_labeled(&self, label: u64) -> Prng {
        let mut fork = self.inner.clone();
        fork.set_stream(label);
        let mut seed = [0u8; 32];
        fork.fill_bytes(&mut seed);
        Prng {
            inner: ChaCha8Rng::from_seed(seed),
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Circularly-symmetric complex normal with unit total variance:
    /// real and imaginary parts are independent N(0, 1/2).
    pub fn complex_standard_normal(&mut self) -> Complex64 {
        let re: f64 = self.inner.sample(StandardNormal);
        let im: f64 = self.inner.sample(StandardNormal);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            return lo;
        }
        self.inner.gen_range(lo..hi)
    }

    /// Uniform draw from 0..n. n must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}
