//! Causal Toeplitz kernels and their application to real signals.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dft::DftPlan;
use crate::error::{EtscError, Result};

/// How a kernel is read past its stored length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum Extension {
    #[default]
    Zeros,
    /// `t_i = t_{n-1} * gamma^(i-n+1)` for `i >= n`.
    Decay(f64),
}

/// Coefficients `t_0..t_{n-1}` of a lower-triangular Toeplitz operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzKernel {
    coeffs: Vec<f64>,
    extension: Extension,
}

impl ToeplitzKernel {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        Self::with_extension(coeffs, Extension::Zeros)
    }

    pub fn with_extension(coeffs: Vec<f64>, extension: Extension) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(EtscError::InvalidSize("kernel must have at least one coefficient".into()));
        }
        if let Some(&bad) = coeffs.iter().find(|c| !c.is_finite()) {
            return Err(EtscError::NonFiniteInput(bad));
        }
        if let Extension::Decay(g) = extension {
            if !(g > 0.0 && g <= 1.0) {
                return Err(EtscError::InvalidArgument(format!("decay gamma {g} not in (0, 1]")));
            }
        }
        Ok(Self { coeffs, extension })
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn extension(&self) -> Extension {
        self.extension
    }

    /// Copy with trailing zeros appended up to `len`. Converting the padded
    /// kernel yields `len` modes, which is how hidden sizes above `n` are
    /// reached.
    pub fn zero_padded(&self, len: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        if len > coeffs.len() {
            coeffs.resize(len, 0.0);
        }
        Self { coeffs, extension: self.extension }
    }

    pub fn extended_coeff(&self, i: usize) -> f64 {
        let n = self.coeffs.len();
        if i < n {
            return self.coeffs[i];
        }
        match self.extension {
            Extension::Zeros => 0.0,
            Extension::Decay(g) => {
                let steps = i - n + 1;
                self.coeffs[n - 1] * g.powi(steps.min(i32::MAX as usize) as i32)
            }
        }
    }

    /// First `m` coefficients under the extension policy.
    pub fn materialize(&self, m: usize) -> Vec<f64> {
        (0..m).map(|i| self.extended_coeff(i)).collect()
    }

    /// `y_i = sum_{j<=i} t_{i-j} x_j`, direct O(m^2) sum.
    pub fn apply_naive(&self, x: &[f64]) -> Vec<f64> {
        let t = self.materialize(x.len());
        (0..x.len())
            .map(|i| (0..=i).map(|j| t[i - j] * x[j]).sum())
            .collect()
    }

    /// Same contract as [`apply_naive`](Self::apply_naive) in O(m log m).
    pub fn apply_fft(&self, x: &[f64]) -> Vec<f64> {
        if x.is_empty() {
            return Vec::new();
        }
        let plan = DftPlan::new(fft_size_for(x.len())).expect("positive size");
        self.apply_fft_planned(x, &plan)
    }

    /// FFT apply with a caller-held plan of size [`fft_size_for`]`(x.len())`.
    pub fn apply_fft_planned(&self, x: &[f64], plan: &DftPlan) -> Vec<f64> {
        let m = x.len();
        let size = plan.size();
        assert_eq!(size, fft_size_for(m), "plan size does not match signal length");
        let mut kernel = vec![Complex64::new(0.0, 0.0); size];
        let mut prod = vec![Complex64::new(0.0, 0.0); size];
        for (i, (k, p)) in kernel.iter_mut().zip(prod.iter_mut()).take(m).enumerate() {
            *k = Complex64::new(self.extended_coeff(i), 0.0);
            *p = Complex64::new(x[i], 0.0);
        }
        plan.forward_raw(&mut kernel);
        plan.forward_raw(&mut prod);
        prod.iter_mut().zip(&kernel).for_each(|(p, k)| *p *= k);
        plan.inverse_raw(&mut prod);
        let scale = 1.0 / size as f64;
        prod[..m].iter().map(|z| z.re * scale).collect()
    }
}

/// Padded transform length used by the FFT apply: next power of two at or
/// above `2m - 1`.
pub fn fft_size_for(m: usize) -> usize {
    (2 * m.max(1) - 1).next_power_of_two()
}

/// `||t - pred|| / ||t||` with `t` embedded as a complex sequence.
pub fn relative_error(t: &[f64], pred: &[Complex64]) -> Result<f64> {
    if t.len() != pred.len() {
        return Err(EtscError::Shape { expected: t.len(), actual: pred.len() });
    }
    let denom = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(EtscError::UndefinedMetric);
    }
    Ok(abs_error(t, pred) / denom)
}

/// Real-valued convenience wrapper around [`relative_error`].
pub fn relative_error_real(t: &[f64], pred: &[f64]) -> Result<f64> {
    let pred: Vec<Complex64> = pred.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    relative_error(t, &pred)
}

/// `||t - pred||` without normalization.
pub fn abs_error(t: &[f64], pred: &[Complex64]) -> f64 {
    t.iter()
        .zip(pred)
        .map(|(&a, b)| (Complex64::new(a, 0.0) - b).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Reconstruction fidelity, falling back to absolute error when the
/// reference kernel is identically zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorMetric {
    Relative(f64),
    Absolute(f64),
}

impl ErrorMetric {
    pub fn value(&self) -> f64 {
        match *self {
            ErrorMetric::Relative(v) | ErrorMetric::Absolute(v) => v,
        }
    }

    pub fn is_absolute(&self) -> bool {
        matches!(self, ErrorMetric::Absolute(_))
    }
}

pub fn reconstruction_error(t: &[f64], pred: &[Complex64]) -> Result<ErrorMetric> {
    match relative_error(t, pred) {
        Ok(v) => Ok(ErrorMetric::Relative(v)),
        Err(EtscError::UndefinedMetric) => Ok(ErrorMetric::Absolute(abs_error(t, pred))),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }

    #[test]
    fn extended_coeff_policies() {
        let k = ToeplitzKernel::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(k.extended_coeff(5), 0.0);
        assert_eq!(k.extended_coeff(1), 2.0);
        let k = ToeplitzKernel::with_extension(vec![1.0, 2.0], Extension::Decay(0.5)).unwrap();
        assert_eq!(k.extended_coeff(3), 0.5);
        assert_eq!(k.extended_coeff(2), 1.0);
    }

    #[test]
    fn constructor_validation() {
        assert!(ToeplitzKernel::new(vec![]).is_err());
        assert!(ToeplitzKernel::new(vec![f64::NAN]).is_err());
        assert!(ToeplitzKernel::with_extension(vec![1.0], Extension::Decay(0.0)).is_err());
        assert!(ToeplitzKernel::with_extension(vec![1.0], Extension::Decay(1.5)).is_err());
        assert!(ToeplitzKernel::with_extension(vec![1.0], Extension::Decay(1.0)).is_ok());
    }

    #[test]
    fn naive_examples() {
        let k = ToeplitzKernel::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(k.apply_naive(&[3.0, 4.0]), vec![3.0, 10.0]);
        let k = ToeplitzKernel::new(vec![2.5]).unwrap();
        assert_eq!(k.apply_naive(&[1.0, -2.0, 4.0]), vec![2.5, -5.0, 10.0]);
        let k = ToeplitzKernel::new(vec![0.0; 4]).unwrap();
        assert_eq!(k.apply_naive(&[1.0, 2.0, 3.0]), vec![0.0; 3]);
    }

    #[test]
    fn fft_delta_and_shift() {
        let x = [0.3, -1.0, 2.0, 0.7, 5.0];
        let mut delta = vec![0.0; 5];
        delta[0] = 1.0;
        let y = ToeplitzKernel::new(delta).unwrap().apply_fft(&x);
        assert!(rel(&x, &y) < 1e-14);
        let mut shift = vec![0.0; 5];
        shift[1] = 1.0;
        let y = ToeplitzKernel::new(shift).unwrap().apply_fft(&x);
        assert!(y[0].abs() < 1e-14);
        for i in 1..5 {
            assert!((y[i] - x[i - 1]).abs() < 1e-14);
        }
    }

    #[test]
    fn fft_matches_naive_all_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in 1..=512 {
            let klen = rng.gen_range(1..=m + 3);
            let k = ToeplitzKernel::new(rand_vec(klen, &mut rng)).unwrap();
            let x = rand_vec(m, &mut rng);
            let e = rel(&k.apply_naive(&x), &k.apply_fft(&x));
            assert!(e < 1e-10, "m={m} err={e}");
        }
    }

    #[test]
    fn fft_matches_naive_with_decay_extension() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = ToeplitzKernel::with_extension(rand_vec(16, &mut rng), Extension::Decay(0.9)).unwrap();
        let x = rand_vec(257, &mut rng);
        assert!(rel(&k.apply_naive(&x), &k.apply_fft(&x)) < 1e-10);
    }

    #[test]
    fn causality_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = ToeplitzKernel::new(rand_vec(32, &mut rng)).unwrap();
        let x = rand_vec(32, &mut rng);
        let mut z = x.clone();
        for v in &mut z[20..] {
            *v += 10.0;
        }
        let (a, b) = (k.apply_naive(&x), k.apply_naive(&z));
        assert_eq!(a[..20], b[..20]);
    }

    #[test]
    fn relative_error_examples() {
        let c = |v: &[f64]| v.iter().map(|&x| Complex64::new(x, 0.0)).collect::<Vec<_>>();
        assert_eq!(relative_error(&[3.0, 4.0], &c(&[3.0, 4.0])).unwrap(), 0.0);
        assert_eq!(relative_error(&[3.0, 4.0], &c(&[0.0, 0.0])).unwrap(), 1.0);
        assert!((relative_error(&[3.0, 4.0], &c(&[3.0, 0.0])).unwrap() - 0.8).abs() < 1e-15);
        let e = relative_error(&[3.0, 4.0], &[Complex64::new(3.0, 0.0), Complex64::new(4.0, 5.0)]).unwrap();
        assert!((e - 1.0).abs() < 1e-15);
        assert!(matches!(relative_error(&[0.0, 0.0], &c(&[1.0, 0.0])), Err(EtscError::UndefinedMetric)));
        assert!(matches!(relative_error(&[1.0], &c(&[1.0, 0.0])), Err(EtscError::Shape { .. })));
    }

    #[test]
    fn zero_kernel_metric_falls_back_to_absolute() {
        let m = reconstruction_error(&[0.0, 0.0], &[Complex64::new(3.0, 0.0), Complex64::new(0.0, 4.0)]).unwrap();
        assert_eq!(m, ErrorMetric::Absolute(5.0));
        assert!(m.is_absolute());
    }
}
