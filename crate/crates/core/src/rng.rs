//! Seeded, portable random streams.
//!
//! Everything that must be reproducible across implementations (generated
//! datasets, shuffles, steal-target choices) draws from PCG32
//! (`pcg32`, 64-bit LCG state with the XSH-RR output permutation, multiplier
//! 6364136223846793005) constructed as `Pcg32::new(seed, stream)`. Floats and
//! bounded integers are derived from `next_u64` with the fixed recipes below,
//! never from a library sampling routine whose algorithm may change.

use rand_core::Rng;
use rand_pcg::Pcg32;

#[derive(Debug, Clone)]
pub struct PortableRng {
    inner: Pcg32,
    spare_normal: Option<f64>,
}

impl PortableRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            inner: Pcg32::new(seed, stream),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`: the top 53 bits of `next_u64` scaled by 2^-53.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..bound` via the 128-bit multiply-high reduction.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    /// Standard normal draw by the Box-Muller transform. Pairs are produced
    /// as `r*cos(t)` then `r*sin(t)` with `r = sqrt(-2 ln(1-u1))`,
    /// `t = 2*pi*u2`.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let t = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * t.sin());
        r * t.cos()
    }

    /// In-place Fisher-Yates, walking from the back and swapping `i` with
    /// `below(i + 1)`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = PortableRng::new(7, 3);
        let mut b = PortableRng::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = PortableRng::new(7, 4);
        assert_ne!(PortableRng::new(7, 3).next_u64(), c.next_u64());
    }

    #[test]
    fn normal_moments() {
        let mut rng = PortableRng::new(1, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = PortableRng::new(42, 0);
        let mut v: Vec<u32> = (0..1000).collect();
        rng.shuffle(&mut v);
        assert_ne!(v, (0..1000).collect::<Vec<_>>());
        v.sort_unstable();
        assert_eq!(v, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = PortableRng::new(5, 5);
        for bound in 1..50 {
            for _ in 0..20 {
                assert!(rng.below(bound) < bound);
            }
        }
    }
}
