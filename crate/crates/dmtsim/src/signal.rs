//! Sampled-waveform container and the deterministic RNG used everywhere.

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// A uniformly sampled waveform with its sample rate.
///
/// Real-valued signals (drive waveforms, photocurrents) are carried with
/// zero imaginary parts so the same container flows through the whole
/// chain. A block counts as real when `max |imag| < 1e-10 * rms`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBlock {
    pub samples: Vec<Complex64>,
    /// Sample rate in Hz.
    pub sample_rate: f64,
}

impl SignalBlock {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self> {
        if sample_rate <= 0.0 {
            return Err(Error::invalid("sample_rate must be > 0"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("samples must be non-empty"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn from_real(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        Self::new(
            samples.into_iter().map(|x| Complex64::new(x, 0.0)).collect(),
            sample_rate,
        )
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean of |x|^2 over the block.
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|x| x.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    /// True when the imaginary residue is negligible against the block rms.
    pub fn is_real(&self) -> bool {
        let rms = self.rms();
        if rms == 0.0 {
            return self.samples.iter().all(|x| x.im == 0.0);
        }
        let max_im = self.samples.iter().map(|x| x.im.abs()).fold(0.0, f64::max);
        max_im < 1e-10 * rms
    }

    /// Real parts of the samples, failing if the block is not real.
    pub fn to_real(&self) -> Result<Vec<f64>> {
        if !self.is_real() {
            return Err(Error::invalid("block carries non-negligible imaginary parts"));
        }
        Ok(self.samples.iter().map(|x| x.re).collect())
    }
}

/// Deterministic, forkable random source.
///
/// Built on ChaCha so that identical seeds give identical streams on every
/// platform. Independent sub-streams are derived per frame (or per sweep
/// point) via [`SimRng::fork`], which keeps parallel frame generation
/// order-independent.
#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
    seed: u64,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent stream for the given index without touching
    /// this generator's state.
    pub fn fork(&self, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        Self {
            inner: rng,
            seed: self.seed,
        }
    }

    /// `n` uniform bits as 0/1 bytes.
    pub fn bits(&mut self, n: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(n);
        let mut word = 0u64;
        let mut left = 0u32;
        for _ in 0..n {
            if left == 0 {
                word = self.inner.next_u64();
                left = 64;
            }
            out.push((word & 1) as u8);
            word >>= 1;
            left -= 1;
        }
        out
    }

    /// Standard normal deviate.
    pub fn std_normal(&mut self) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        StandardNormal.sample(&mut self.inner)
    }

    /// Circularly symmetric complex Gaussian with total variance `var`.
    pub fn complex_normal(&mut self, var: f64) -> Complex64 {
        let s = (var / 2.0).sqrt();
        Complex64::new(s * self.std_normal(), s * self.std_normal())
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        use rand::Rng;
        self.inner.random_range(0..n)
    }
}

impl RngCore for SimRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SimRng::new(42);
        let mut b = SimRng::new(42);
        assert_eq!(a.bits(1000), b.bits(1000));
        assert_eq!(a.std_normal(), b.std_normal());
    }

    #[test]
    fn forks_are_independent_of_parent_state() {
        let mut a = SimRng::new(7);
        let _ = a.bits(123); // advance the parent
        let mut f1 = a.fork(3);
        let mut f2 = SimRng::new(7).fork(3);
        assert_eq!(f1.bits(64), f2.bits(64));
        let mut g = a.fork(4);
        assert_ne!(f2.fork(3).bits(64), g.bits(64));
    }

    #[test]
    fn real_block_detection() {
        let b = SignalBlock::from_real(vec![1.0, -2.0, 0.5], 10.0).unwrap();
        assert!(b.is_real());
        let c = SignalBlock::new(vec![Complex64::new(1.0, 0.5)], 10.0).unwrap();
        assert!(!c.is_real());
        assert!(c.to_real().is_err());
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(SignalBlock::from_real(vec![], 1.0).is_err());
        assert!(SignalBlock::from_real(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn bit_stream_is_balanced() {
        let mut rng = SimRng::new(1);
        let bits = rng.bits(100_000);
        let ones: usize = bits.iter().map(|&b| b as usize).sum();
        assert!((ones as f64 - 50_000.0).abs() < 1_000.0);
    }
}
