//! Seed-addressed random streams.
//!
//! Every stream is a ChaCha8 generator keyed from a 64-bit seed. Two streams
//! built from the same seed emit the same values on every client, which is
//! what lets a receiver rebuild a perturbation from nothing but its seed.
//!
//! Draw plan (fixed, so stream positions are predictable from shapes):
//!
//! * a uniform `f64` consumes one 64-bit word (top 53 bits);
//! * a standard Gaussian consumes exactly two uniforms and uses the cosine
//!   branch of the Box–Muller transform, the sine branch is discarded;
//! * a bounded index uses widening-multiply sampling, which may consume
//!   more than one word but never uses a modulo.
//!
//! `position` counts emitted values (not raw words).

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Seed(pub u64);

impl Seed {
    pub const fn new(value: u64) -> Self {
        Seed(value)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    /// Seed offset used for subspace refreshes: `s_glob + t`.
    pub const fn offset(self, t: u64) -> Self {
        Seed(self.0.wrapping_add(t))
    }
}

impl From<u64> for Seed {
    fn from(value: u64) -> Self {
        Seed(value)
    }
}

/// Well-known domains for streams derived from a run's global seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum StreamDomain {
    TaskData = 1,
    ClientPrivate = 2,
    Topology = 3,
    Initialization = 4,
    Test = 0xFFFF,
}

#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
    position: u64,
}

impl RandomStream {
    pub fn from_seed(seed: Seed) -> Self {
        RandomStream {
            rng: ChaCha8Rng::seed_from_u64(seed.0),
            position: 0,
        }
    }

    /// An independent stream addressed by `(seed, domain, index)`. Uses the
    /// ChaCha stream selector, so it never overlaps `from_seed(seed)`.
    pub fn derived(seed: Seed, domain: StreamDomain, index: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
        rng.set_stream(((domain as u64) << 32) | index as u64);
        RandomStream { rng, position: 0 }
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn next_u64(&mut self) -> u64 {
        self.position += 1;
        self.rng.next_u64()
    }

    pub fn next_seed(&mut self) -> Seed {
        Seed(self.next_u64())
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.position += 1;
        self.rng.gen::<f64>()
    }

    pub fn gaussian(&mut self) -> f64 {
        self.position += 1;
        let u1 = 1.0 - self.rng.gen::<f64>();
        let u2 = self.rng.gen::<f64>();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }

    pub fn uniform_index(&mut self, bound: usize) -> Result<usize> {
        if bound == 0 {
            return Err(Error::InvalidArgument("uniform_index bound must be >= 1".into()));
        }
        self.position += 1;
        Ok(self.rng.gen_range(0..bound as u64) as usize)
    }

    pub(crate) fn index_unchecked(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        self.position += 1;
        self.rng.gen_range(0..bound as u64) as usize
    }

    pub fn fill_gaussian<F: Real>(&mut self, out: &mut [F]) {
        for x in out {
            *x = F::from_f64(self.gaussian());
        }
    }

    /// Row-major tensor of independent standard Gaussians.
    pub fn gaussian_tensor(&mut self, shape: &[usize]) -> Result<Vec<f64>> {
        let len = element_count(shape)?;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.gaussian());
        }
        Ok(out)
    }
}

pub fn element_count(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("empty dimension list".into()));
    }
    shape.iter().try_fold(1usize, |acc, &dim| {
        if dim == 0 {
            return Err(Error::InvalidShape(format!("zero dimension in {shape:?}")));
        }
        acc.checked_mul(dim)
            .ok_or_else(|| Error::InvalidShape(format!("element count of {shape:?} overflows")))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = RandomStream::from_seed(Seed(42));
        let mut b = RandomStream::from_seed(Seed(42));
        let xa: Vec<usize> = (0..3).map(|_| a.uniform_index(1000).unwrap()).collect();
        let xb: Vec<usize> = (0..3).map(|_| b.uniform_index(1000).unwrap()).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn distinct_seeds_differ() {
        let a = RandomStream::from_seed(Seed(0)).gaussian();
        let b = RandomStream::from_seed(Seed(1)).gaussian();
        assert_ne!(a, b);
    }

    #[test]
    fn gaussian_moments() {
        let mut s = RandomStream::from_seed(Seed(7));
        let xs: Vec<f64> = (0..10_000).map(|_| s.gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!(mean.abs() <= 0.05, "mean {mean}");
        assert!((0.9..=1.1).contains(&var), "variance {var}");
    }

    #[test]
    fn tensor_advances_position_by_element_count() {
        let mut s = RandomStream::from_seed(Seed(3));
        let t = s.gaussian_tensor(&[2, 3]).unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(s.position(), 6);
        let again = RandomStream::from_seed(Seed(3)).gaussian_tensor(&[2, 3]).unwrap();
        assert_eq!(
            t.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            again.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn invalid_shapes() {
        let mut s = RandomStream::from_seed(Seed(3));
        assert!(matches!(s.gaussian_tensor(&[2, 0]), Err(Error::InvalidShape(_))));
        assert!(matches!(s.gaussian_tensor(&[]), Err(Error::InvalidShape(_))));
        assert!(matches!(
            s.gaussian_tensor(&[usize::MAX, 2]),
            Err(Error::InvalidShape(_))
        ));
        assert_eq!(s.position(), 0);
    }

    #[test]
    fn zero_bound_rejected() {
        let mut s = RandomStream::from_seed(Seed(3));
        assert!(matches!(s.uniform_index(0), Err(Error::InvalidArgument(_))));
        for _ in 0..100 {
            assert_eq!(s.uniform_index(1).unwrap(), 0);
        }
    }

    #[test]
    fn derived_streams_are_distinct() {
        let base = RandomStream::from_seed(Seed(9)).next_u64();
        let d0 = RandomStream::derived(Seed(9), StreamDomain::ClientPrivate, 0).next_u64();
        let d1 = RandomStream::derived(Seed(9), StreamDomain::ClientPrivate, 1).next_u64();
        assert_ne!(base, d0);
        assert_ne!(d0, d1);
    }
}
