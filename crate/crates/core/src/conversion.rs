//! Toeplitz kernel to diagonal SSM conversion.
//!
//! The exact route appends `-sum(t)` to the kernel so that the augmented
//! sequence has zero mean, then places the poles on the nontrivial
//! `(n+1)`-th roots of unity. The Vandermonde system over those nodes is the
//! DFT matrix scaled by `sqrt(n+1)`, so the weights fall out of one
//! transform and the pole at `1` (which would carry the mean) has weight
//! zero and is dropped.
//!
//! The gradient route fits `t_i ~ sum_k b_k * lambda_k^i` by plain gradient
//! descent with `lambda = sigmoid(r) * exp(i*theta)`; it exists as a
//! comparison baseline.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dft::DftPlan;
use crate::error::{EtscError, Result};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Diagonal SSM with `C` fixed to all ones: impulse response
/// `t_i = sum_k weights[k] * lambda[k]^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmModes {
    lambda: Vec<Complex64>,
    weights: Vec<Complex64>,
    gamma: f64,
    origin_length: usize,
}

impl SsmModes {
    pub fn new(
        lambda: Vec<Complex64>,
        weights: Vec<Complex64>,
        gamma: f64,
        origin_length: usize,
    ) -> Result<Self> {
        if lambda.is_empty() {
            return Err(EtscError::InvalidSize("hidden size must be at least 1".into()));
        }
        if lambda.len() != weights.len() {
            return Err(EtscError::Shape { expected: lambda.len(), actual: weights.len() });
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(EtscError::InvalidArgument(format!("gamma {gamma} not in (0, 1]")));
        }
        let finite = |z: &Complex64| z.re.is_finite() && z.im.is_finite();
        if !lambda.iter().chain(&weights).all(finite) {
            return Err(EtscError::InvalidArgument("non-finite pole or weight".into()));
        }
        Ok(Self { lambda, weights, gamma, origin_length })
    }

    pub fn hidden_size(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &[Complex64] {
        &self.lambda
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Complex64] {
        &mut self.weights
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn origin_length(&self) -> usize {
        self.origin_length
    }

    /// Index of the mode whose pole and weight are the conjugates of mode
    /// `k`, or `k` itself for a self-conjugate mode. The mirrored index is
    /// tried first, which is where the exact conversion puts partners.
    pub fn conjugate_partner(&self, k: usize) -> Option<usize> {
        let h = self.hidden_size();
        let matches = |j: usize| {
            let tol = 1e-12 * (1.0 + self.lambda[k].norm());
            let wtol = 1e-9 * (1.0 + self.weights[k].norm());
            (self.lambda[j] - self.lambda[k].conj()).norm() <= tol
                && (self.weights[j] - self.weights[k].conj()).norm() <= wtol
        };
        let mirror = h - 1 - k;
        if matches(mirror) {
            return Some(mirror);
        }
        (0..h).find(|&j| matches(j))
    }
}

/// Kernel with `-sum(t)` appended, length `n + 1`.
pub fn augment(t: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len() + 1);
    out.extend_from_slice(t);
    out.push(-t.iter().sum::<f64>());
    out
}

/// `exp(-2*pi*i*k/size)`, evaluated on the angle of smallest magnitude so
/// that `root(k)` and `root(size - k)` are exact conjugates.
fn root_of_unity(k: usize, size: usize) -> Complex64 {
    let angle = if 2 * k > size {
        2.0 * PI * (size - k) as f64 / size as f64
    } else {
        -2.0 * PI * k as f64 / size as f64
    };
    Complex64::new(angle.cos(), angle.sin())
}

/// Unitary inverse DFT of the augmented kernel, so that
/// `augment(t)[j] = sum_k spectrum[k] * exp(-2*pi*i*j*k/(n+1)) / sqrt(n+1)`.
/// Bin 0 is the scaled sum of the augmented kernel and vanishes up to
/// rounding.
pub fn augmented_spectrum(t: &[f64]) -> Result<Vec<Complex64>> {
    if t.is_empty() {
        return Err(EtscError::InvalidSize("kernel must have at least one coefficient".into()));
    }
    let aug = augment(t);
    let plan = DftPlan::new(aug.len())?;
    let mut data: Vec<Complex64> = aug.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.inverse_in_place(&mut data)?;
    Ok(data)
}

/// Exact closed-form conversion. Returns `n` modes with
/// `lambda_s = exp(-2*pi*i*(s+1)/(n+1))`.
pub fn etsc_convert(t: &[f64]) -> Result<SsmModes> {
    let n = t.len();
    let spectrum = augmented_spectrum(t)?;
    let size = n + 1;
    let scale = 1.0 / (size as f64).sqrt();
    let lambda = (1..size).map(|k| root_of_unity(k, size)).collect();
    let weights = spectrum[1..].iter().map(|c| c * scale).collect();
    SsmModes::new(lambda, weights, 1.0, n)
}

/// `t_hat_i = sum_k b_k * lambda_k^i` for `i < length`, by iterated
/// multiplication of the pole powers.
pub fn reconstruct(modes: &SsmModes, length: usize) -> Vec<Complex64> {
    let mut powers = vec![ONE; modes.hidden_size()];
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let mut acc = ZERO;
        for ((p, b), l) in powers.iter_mut().zip(&modes.weights).zip(&modes.lambda) {
            acc += b * *p;
            *p *= l;
        }
        out.push(acc);
    }
    out
}

/// Result of [`truncate`]. `kept` may exceed `requested` by one when a
/// conjugate pair straddles the cutoff.
#[derive(Debug, Clone)]
pub struct Truncation {
    pub modes: SsmModes,
    pub requested: usize,
    pub kept: usize,
    /// Original indices of the kept modes, ascending.
    pub kept_indices: Vec<usize>,
}

/// Keep the modes with the largest `|b_k|`, ties to the lower index,
/// without splitting conjugate pairs.
pub fn truncate(modes: &SsmModes, h_new: usize) -> Result<Truncation> {
    let h = modes.hidden_size();
    if h_new == 0 || h_new > h {
        return Err(EtscError::InvalidArgument(format!(
            "truncation target {h_new} outside 1..={h}"
        )));
    }
    let mut order: Vec<usize> = (0..h).collect();
    order.sort_by(|&a, &b| {
        modes.weights[b]
            .norm()
            .total_cmp(&modes.weights[a].norm())
            .then(a.cmp(&b))
    });
    let mut keep = vec![false; h];
    let mut count = 0;
    for &k in &order {
        if count >= h_new {
            break;
        }
        if keep[k] {
            continue;
        }
        keep[k] = true;
        count += 1;
        if let Some(p) = modes.conjugate_partner(k) {
            if !keep[p] {
                keep[p] = true;
                count += 1;
            }
        }
    }
    let kept_indices: Vec<usize> = (0..h).filter(|&k| keep[k]).collect();
    let lambda = kept_indices.iter().map(|&k| modes.lambda[k]).collect();
    let weights = kept_indices.iter().map(|&k| modes.weights[k]).collect();
    Ok(Truncation {
        modes: SsmModes::new(lambda, weights, modes.gamma, modes.origin_length)?,
        requested: h_new,
        kept: kept_indices.len(),
        kept_indices,
    })
}

/// Exact conversion whose poles sit on the circle of radius `gamma`, so the
/// impulse response decays as `gamma^i` past the kernel length.
pub fn convert_with_decay(t: &[f64], gamma: f64) -> Result<SsmModes> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(EtscError::InvalidArgument(format!("gamma {gamma} not in (0, 1]")));
    }
    let inv = 1.0 / gamma;
    let mut scale = 1.0;
    let mut rescaled = Vec::with_capacity(t.len());
    for (i, &v) in t.iter().enumerate() {
        if i > 0 {
            scale *= inv;
        }
        let r = if v == 0.0 { 0.0 } else { v * scale };
        if !r.is_finite() || r.abs() > 1e150 {
            return Err(EtscError::DecayTooStrong { gamma, index: i });
        }
        rescaled.push(r);
    }
    let base = etsc_convert(&rescaled)?;
    let lambda = base.lambda.iter().map(|l| l * gamma).collect();
    SsmModes::new(lambda, base.weights, gamma, t.len())
}

/// Parameters of the gradient baseline,
/// `lambda_k = sigmoid(r_k) * exp(i * theta_k)`, `b_k = b_re_k + i * b_im_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientParams {
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
    pub b_re: Vec<f64>,
    pub b_im: Vec<f64>,
}

impl GradientParams {
    /// Standard-normal draw of every parameter.
    pub fn init(h: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        let r = draw(h);
        let theta = draw(h);
        let b_re = draw(h);
        let b_im = draw(h);
        Self { r, theta, b_re, b_im }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.r
            .iter()
            .zip(&self.theta)
            .map(|(&r, &th)| Complex64::from_polar(sigmoid(r), th))
            .collect()
    }

    pub fn weights(&self) -> Vec<Complex64> {
        self.b_re.iter().zip(&self.b_im).map(|(&a, &b)| Complex64::new(a, b)).collect()
    }

    fn is_finite(&self) -> bool {
        [&self.r, &self.theta, &self.b_re, &self.b_im]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    fn axpy(&mut self, alpha: f64, g: &GradientParams) {
        let pairs = [
            (&mut self.r, &g.r),
            (&mut self.theta, &g.theta),
            (&mut self.b_re, &g.b_re),
            (&mut self.b_im, &g.b_im),
        ];
        for (dst, src) in pairs {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += alpha * s);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone)]
pub struct GradientConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Loss is recorded every `record_every` iterations, plus the final one.
    pub record_every: usize,
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self { iterations: 10_000, step_size: 1e-2, seed: 0, record_every: 100 }
    }
}

impl GradientConfig {
    /// Defaults with the step capped at `0.2 / h`. The loss curvature in the
    /// weights grows roughly linearly with `h`, and the fixed `1e-2` step
    /// diverges once `h` reaches a few hundred.
    pub fn for_hidden(h: usize) -> Self {
        Self { step_size: (0.2 / h.max(1) as f64).min(1e-2), ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(EtscError::InvalidArgument("iterations must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(EtscError::InvalidArgument("step size must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(EtscError::InvalidArgument("record cadence must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GradientOutcome {
    pub modes: SsmModes,
    pub params: GradientParams,
    /// `(iteration, loss)` pairs; loss is evaluated before the update of that
    /// iteration, the last entry after the final update.
    pub loss_trace: Vec<(usize, f64)>,
}

const CHUNK: usize = 64;
/// Pole powers below this squared magnitude are flushed to zero; their
/// contribution is far below f64 resolution and subnormal arithmetic is slow.
const TINY: f64 = 1e-280;

/// Predicted kernel `p_i = sum_k b_k lambda_k^i`. Chunked over `i` with a
/// fixed chunk size so the result does not depend on the thread count.
fn predict(lambda: &[Complex64], weights: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![ZERO; n];
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        let start = (c * CHUNK) as i32;
        let mut powers: Vec<Complex64> = lambda.iter().map(|l| l.powi(start)).collect();
        for slot in chunk.iter_mut() {
            let mut acc = ZERO;
            for ((p, b), l) in powers.iter_mut().zip(weights).zip(lambda) {
                acc += b * *p;
                *p *= l;
                if p.norm_sqr() < TINY {
                    *p = ZERO;
                }
            }
            *slot = acc;
        }
    });
    out
}

/// Squared reconstruction loss `sum_i |t_i - p_i|^2`.
pub fn gradient_loss(t: &[f64], params: &GradientParams) -> f64 {
    let p = predict(&params.poles(), &params.weights(), t.len());
    residual_energy(t, &p)
}

fn residual_energy(t: &[f64], p: &[Complex64]) -> f64 {
    t.iter().zip(p).map(|(&ti, pi)| (pi - ti).norm_sqr()).sum()
}

/// Loss and its analytic gradient with respect to every parameter.
pub fn loss_and_gradient(t: &[f64], params: &GradientParams) -> (f64, GradientParams) {
    let n = t.len();
    let lambda = params.poles();
    let weights = params.weights();
    let p = predict(&lambda, &weights, n);
    let loss = residual_energy(t, &p);
    let conj_res: Vec<Complex64> = t.iter().zip(&p).map(|(&ti, pi)| (pi - ti).conj()).collect();
    let scale = 2.0;

    // For each mode: s = sum_i conj(e_i) lambda^i, s1 = sum_i i conj(e_i) lambda^i.
    let grads: Vec<[f64; 4]> = (0..lambda.len())
        .into_par_iter()
        .map(|k| {
            let l = lambda[k];
            let mut pow = ONE;
            let mut s = ZERO;
            let mut s1 = ZERO;
            for (i, e) in conj_res.iter().enumerate() {
                let term = e * pow;
                s += term;
                s1 += term * i as f64;
                pow *= l;
                if pow.norm_sqr() < TINY {
                    break;
                }
            }
            let sig = sigmoid(params.r[k]);
            let bs1 = weights[k] * s1;
            [
                scale * (1.0 - sig) * bs1.re,
                -scale * bs1.im,
                scale * s.re,
                -scale * s.im,
            ]
        })
        .collect();
    let grad = GradientParams {
        r: grads.iter().map(|g| g[0]).collect(),
        theta: grads.iter().map(|g| g[1]).collect(),
        b_re: grads.iter().map(|g| g[2]).collect(),
        b_im: grads.iter().map(|g| g[3]).collect(),
    };
    (loss, grad)
}

/// Full-batch gradient descent from a seeded standard-normal start.
pub fn gradient_convert(t: &[f64], h: usize, cfg: &GradientConfig) -> Result<GradientOutcome> {
    if t.is_empty() {
        return Err(EtscError::InvalidSize("kernel must have at least one coefficient".into()));
    }
    if h == 0 {
        return Err(EtscError::InvalidSize("hidden size must be at least 1".into()));
    }
    cfg.validate()?;
    let mut params = GradientParams::init(h, cfg.seed);
    let mut trace = Vec::new();
    for it in 0..cfg.iterations {
        let (loss, grad) = loss_and_gradient(t, &params);
        if !loss.is_finite() {
            return Err(EtscError::Divergence { iteration: it });
        }
        if it % cfg.record_every == 0 {
            trace.push((it, loss));
        }
        params.axpy(-cfg.step_size, &grad);
        if !params.is_finite() {
            return Err(EtscError::Divergence { iteration: it });
        }
    }
    let final_loss = gradient_loss(t, &params);
    if !final_loss.is_finite() {
        return Err(EtscError::Divergence { iteration: cfg.iterations });
    }
    trace.push((cfg.iterations, final_loss));
    let modes = SsmModes::new(params.poles(), params.weights(), 1.0, t.len())?;
    Ok(GradientOutcome { modes, params, loss_trace: trace })
}
