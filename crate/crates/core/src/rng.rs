//! Seeded random streams.
//!
//! All randomness flows through PCG32 (XSH-RR, 64-bit state) sub-streams.
//! A `(seed, stream)` pair fully determines a sequence, so work can be split
//! across threads without changing results. Derived quantities are computed
//! from raw `u32` draws with fixed formulas:
//!
//! * uniform in `(0, 1)`: `(u + 0.5) / 2^32`
//! * standard normal: Box-Muller cosine branch from two uniforms
//! * index in `[0, n)`: `(u · n) >> 32`

use rand_core::Rng;
use rand_pcg::Pcg32;

pub struct Stream {
    inner: Pcg32,
}

impl Stream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            inner: Pcg32::new(seed, stream),
        }
    }

    #[inline]
    pub fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let lo = self.next_u32() as u64;
        let hi = self.next_u32() as u64;
        (hi << 32) | lo
    }

    /// Uniform in the open interval `(0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u32() as f64 + 0.5) / 4_294_967_296.0
    }

    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        ((self.next_u32() as u64 * n as u64) >> 32) as usize
    }

    #[inline]
    pub fn coin(&mut self) -> bool {
        self.next_u32() & 1 == 1
    }

    /// `count` distinct indices from `[0, n)`, in draw order (partial
    /// Fisher-Yates).
    pub fn choose_distinct(&mut self, n: usize, count: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        let count = count.min(n);
        for i in 0..count {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    }
}
