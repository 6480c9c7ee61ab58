//! Portable seeded randomness.
//!
//! All randomness flows from ChaCha8 keyed by a 64-bit seed, with an
//! optional 64-bit stream number so independent consumers (one per sample,
//! one per epoch) never share a sequence. Floating-point draws use fixed
//! algorithms so output is identical on every platform:
//!
//! * uniform `[0, 1)`: the top 53 bits of one `u64`, times `2^-53`;
//! * standard normal: Box–Muller from two uniforms, cosine branch only;
//! * bounded integers: rejection sampling on the top bits;
//! * shuffles: Fisher–Yates from the last index down.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct PortableRng {
    inner: ChaCha8Rng,
}

impl PortableRng {
    pub fn new(seed: u64) -> Self {
        PortableRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        PortableRng { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        // 1 − u keeps the logarithm argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let bits = 64 - (n - 1).leading_zeros();
        loop {
            let candidate = if bits == 0 { 0 } else { self.next_u64() >> (64 - bits) };
            if candidate < n {
                return candidate;
            }
        }
    }

    /// Uniform integer in `low..=high`.
    pub fn range_inclusive(&mut self, low: usize, high: usize) -> usize {
        low + self.below((high - low + 1) as u64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
