//! Portable random streams.
//!
//! All randomness in the crate flows through [`SeededStream`]: a ChaCha8
//! keystream seeded with `seed_from_u64`, uniform variates built from the top
//! 53 bits of each 64-bit word, and Gaussian variates obtained by the inverse
//! normal CDF. Given the seed, the sequence of values is identical on every
//! platform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

pub struct SeededStream {
    rng: ChaCha8Rng,
    std_normal: Normal,
}

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            std_normal: Normal::standard(),
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Uniform on the open interval `(0, 1)`; never returns an endpoint.
    pub fn open_unit(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * TWO_POW_NEG_53
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u = self.open_unit();
        self.std_normal.inverse_cdf(u)
    }

    pub fn normal(&mut self, sigma: f64) -> f64 {
        sigma * self.standard_normal()
    }
}
