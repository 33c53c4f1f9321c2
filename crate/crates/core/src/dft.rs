//! Unitary discrete Fourier transform of arbitrary length.
//!
//! Both directions carry a `1/sqrt(n)` factor:
//!
//! ```text
//! forward[k] = 1/sqrt(n) * sum_j v[j] * exp(-2*pi*i*j*k/n)
//! inverse[j] = 1/sqrt(n) * sum_k v[k] * exp(+2*pi*i*j*k/n)
//! ```
//!
//! Power-of-two sizes run an iterative radix-2 transform. Every other size
//! goes through Bluestein's chirp-z algorithm on top of a power-of-two
//! transform of size `>= 2n - 1`, so the transform length is exactly `n`
//! and never padded.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{EtscError, Result};

/// Which algorithm a plan runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DftStrategy {
    Radix2,
    /// Chirp-z with the given inner power-of-two convolution size.
    Bluestein { inner: usize },
}

/// Unnormalized radix-2 transform, `e^{-i}` sign convention.
#[derive(Debug, Clone)]
struct Radix2 {
    size: usize,
    /// `exp(-2*pi*i*k/size)` for `k < size/2`.
    twiddles: Vec<Complex64>,
    bitrev: Vec<u32>,
}

impl Radix2 {
    fn new(size: usize) -> Self {
        debug_assert!(size.is_power_of_two());
        let twiddles = (0..size / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / size as f64))
            .collect();
        let bits = size.trailing_zeros();
        let bitrev = (0..size as u32)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (32 - bits) })
            .collect();
        Self { size, twiddles, bitrev }
    }

    fn run(&self, data: &mut [Complex64]) {
        let n = self.size;
        for (i, &j) in self.bitrev.iter().enumerate() {
            let j = j as usize;
            if i < j {
                data.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for chunk in data.chunks_exact_mut(len) {
                let (lo, hi) = chunk.split_at_mut(half);
                for k in 0..half {
                    let t = hi[k] * self.twiddles[k * stride];
                    hi[k] = lo[k] - t;
                    lo[k] += t;
                }
            }
            len <<= 1;
        }
    }

    /// Unnormalized `e^{+i}` transform via conjugation.
    fn run_inverse(&self, data: &mut [Complex64]) {
        data.iter_mut().for_each(|z| *z = z.conj());
        self.run(data);
        data.iter_mut().for_each(|z| *z = z.conj());
    }
}

#[derive(Debug, Clone)]
struct Bluestein {
    inner: Radix2,
    /// `exp(-i*pi*k^2/n)` for `k < n`.
    chirp: Vec<Complex64>,
    /// Spectrum of the conjugate chirp filter, pre-divided by the inner size.
    filter_spectrum: Vec<Complex64>,
}

impl Bluestein {
    fn new(n: usize) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        let inner = Radix2::new(m);
        // k^2 mod 2n in exact integer arithmetic keeps the angle small.
        let two_n = 2 * n as u128;
        let chirp: Vec<Complex64> = (0..n)
            .map(|k| {
                let r = (k as u128 * k as u128) % two_n;
                Complex64::from_polar(1.0, -PI * r as f64 / n as f64)
            })
            .collect();
        let mut filter = vec![Complex64::new(0.0, 0.0); m];
        filter[0] = chirp[0].conj();
        for k in 1..n {
            filter[k] = chirp[k].conj();
            filter[m - k] = chirp[k].conj();
        }
        inner.run(&mut filter);
        let scale = 1.0 / m as f64;
        filter.iter_mut().for_each(|z| *z *= scale);
        Self { inner, chirp, filter_spectrum: filter }
    }

    fn run(&self, data: &mut [Complex64]) {
        let n = self.chirp.len();
        let m = self.inner.size;
        let mut work = vec![Complex64::new(0.0, 0.0); m];
        for k in 0..n {
            work[k] = data[k] * self.chirp[k];
        }
        self.inner.run(&mut work);
        for (w, f) in work.iter_mut().zip(&self.filter_spectrum) {
            *w *= f;
        }
        self.inner.run_inverse(&mut work);
        for k in 0..n {
            data[k] = work[k] * self.chirp[k];
        }
    }
}

#[derive(Debug, Clone)]
enum Engine {
    Radix2(Radix2),
    Bluestein(Bluestein),
}

/// Reusable transform plan for one size. Immutable once built, so it can be
/// shared across threads.
#[derive(Debug, Clone)]
pub struct DftPlan {
    size: usize,
    scale: f64,
    engine: Engine,
}

impl DftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(EtscError::InvalidSize("transform size must be positive".into()));
        }
        let engine = if n.is_power_of_two() {
            Engine::Radix2(Radix2::new(n))
        } else {
            Engine::Bluestein(Bluestein::new(n))
        };
        Ok(Self { size: n, scale: 1.0 / (n as f64).sqrt(), engine })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn strategy(&self) -> DftStrategy {
        match &self.engine {
            Engine::Radix2(_) => DftStrategy::Radix2,
            Engine::Bluestein(b) => DftStrategy::Bluestein { inner: b.inner.size },
        }
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.size {
            return Err(EtscError::Shape { expected: self.size, actual: len });
        }
        Ok(())
    }

    fn unnormalized(&self, data: &mut [Complex64]) {
        match &self.engine {
            Engine::Radix2(r) => r.run(data),
            Engine::Bluestein(b) => b.run(data),
        }
    }

    /// Unitary forward transform, in place.
    pub fn forward_in_place(&self, data: &mut [Complex64]) -> Result<()> {
        self.check(data.len())?;
        self.unnormalized(data);
        data.iter_mut().for_each(|z| *z *= self.scale);
        Ok(())
    }

    /// Unitary inverse transform, in place.
    pub fn inverse_in_place(&self, data: &mut [Complex64]) -> Result<()> {
        self.check(data.len())?;
        data.iter_mut().for_each(|z| *z = z.conj());
        self.unnormalized(data);
        data.iter_mut().for_each(|z| *z = z.conj() * self.scale);
        Ok(())
    }

    pub fn forward(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut out = v.to_vec();
        self.forward_in_place(&mut out)?;
        Ok(out)
    }

    pub fn inverse(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut out = v.to_vec();
        self.inverse_in_place(&mut out)?;
        Ok(out)
    }

    /// Unnormalized forward transform (no `1/sqrt(n)`), used by convolution
    /// paths that fold the scale into a single factor.
    pub(crate) fn forward_raw(&self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.size);
        self.unnormalized(data);
    }

    /// Unnormalized inverse transform.
    pub(crate) fn inverse_raw(&self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.size);
        data.iter_mut().for_each(|z| *z = z.conj());
        self.unnormalized(data);
        data.iter_mut().for_each(|z| *z = z.conj());
    }
}

/// Shorthand for `DftPlan::new`.
pub fn plan(n: usize) -> Result<DftPlan> {
    DftPlan::new(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(v: &[Complex64], sign: f64) -> Vec<Complex64> {
        let n = v.len();
        let s = 1.0 / (n as f64).sqrt();
        (0..n)
            .map(|k| {
                v.iter()
                    .enumerate()
                    .map(|(j, x)| {
                        let idx = (j * k) % n;
                        x * Complex64::from_polar(1.0, sign * 2.0 * PI * idx as f64 / n as f64)
                    })
                    .sum::<Complex64>()
                    * s
            })
            .collect()
    }

    fn random(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn strategy_selection() {
        assert_eq!(plan(4).unwrap().strategy(), DftStrategy::Radix2);
        assert_eq!(plan(1).unwrap().strategy(), DftStrategy::Radix2);
        assert!(matches!(plan(5).unwrap().strategy(), DftStrategy::Bluestein { .. }));
        assert_eq!(plan(8193).unwrap().strategy(), DftStrategy::Bluestein { inner: 32768 });
    }

    #[test]
    fn zero_size_rejected() {
        assert!(matches!(plan(0), Err(EtscError::InvalidSize(_))));
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let p = plan(4).unwrap();
        assert!(matches!(p.forward(&[c(1.0); 3]), Err(EtscError::Shape { expected: 4, actual: 3 })));
        assert!(p.inverse(&[c(1.0); 5]).is_err());
    }

    #[test]
    fn delta_and_dc() {
        let p = plan(4).unwrap();
        let out = p.forward(&[c(1.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        assert!(max_abs_diff(&out, &[c(0.5); 4]) < 1e-15);
        let out = p.forward(&[c(1.0); 4]).unwrap();
        assert!(max_abs_diff(&out, &[c(2.0), c(0.0), c(0.0), c(0.0)]) < 1e-15);
        let back = p.inverse(&[c(2.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        assert!(max_abs_diff(&back, &[c(1.0); 4]) < 1e-15);
    }

    #[test]
    fn matches_naive_small_sizes() {
        for n in 1..=64 {
            let v = random(n, n as u64);
            let p = plan(n).unwrap();
            assert!(max_abs_diff(&p.forward(&v).unwrap(), &naive(&v, -1.0)) < 1e-12, "n={n}");
            assert!(max_abs_diff(&p.inverse(&v).unwrap(), &naive(&v, 1.0)) < 1e-12, "n={n}");
        }
    }

    #[test]
    fn matches_naive_large_primes() {
        for n in [127usize, 509, 8191] {
            let v = random(n, 99);
            let p = plan(n).unwrap();
            assert!(max_abs_diff(&p.forward(&v).unwrap(), &naive(&v, -1.0)) < 1e-10, "n={n}");
        }
    }

    #[test]
    fn length_seven_and_eleven() {
        let v = random(7, 1);
        assert!(max_abs_diff(&plan(7).unwrap().forward(&v).unwrap(), &naive(&v, -1.0)) < 1e-12);
        let v = random(11, 2);
        assert!(max_abs_diff(&plan(11).unwrap().inverse(&v).unwrap(), &naive(&v, 1.0)) < 1e-12);
    }

    #[test]
    fn round_trip_sixteen() {
        let v = random(16, 5);
        let p = plan(16).unwrap();
        let back = p.inverse(&p.forward(&v).unwrap()).unwrap();
        assert!(max_abs_diff(&back, &v) < 1e-12);
    }

    #[test]
    fn unitary_up_to_32768() {
        for n in [1usize, 2, 3, 100, 1000, 4097, 32768] {
            let v = random(n, n as u64 + 7);
            let p = plan(n).unwrap();
            let f = p.forward(&v).unwrap();
            let e0: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let e1: f64 = f.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!(((e0 - e1) / e0).abs() < 1e-10, "n={n}");
            let back = p.inverse(&f).unwrap();
            assert!(max_abs_diff(&back, &v) < 1e-10, "n={n}");
        }
    }

    #[test]
    fn real_input_conjugate_symmetry() {
        for n in [8usize, 9, 31] {
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let v: Vec<Complex64> = (0..n).map(|_| c(rng.gen_range(-1.0..1.0))).collect();
            let f = plan(n).unwrap().forward(&v).unwrap();
            for k in 0..n {
                assert!((f[k] - f[(n - k) % n].conj()).norm() < 1e-12);
            }
        }
    }
}
