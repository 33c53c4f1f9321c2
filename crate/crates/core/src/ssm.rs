//! Diagonal SSM recurrence: `u_k <- lambda_k * u_k + b_k * x`, `y = Re(sum_k u_k)`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::conversion::SsmModes;
use crate::error::{EtscError, Result};

/// Hidden state of one scalar stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmState {
    u: Vec<Complex64>,
    position: u64,
    max_imag_residual: f64,
    output_scale: f64,
}

impl SsmState {
    pub fn new(modes: &SsmModes) -> Self {
        Self {
            u: vec![Complex64::new(0.0, 0.0); modes.hidden_size()],
            position: 0,
            max_imag_residual: 0.0,
            output_scale: 0.0,
        }
    }

    pub fn hidden(&self) -> &[Complex64] {
        &self.u
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    /// Largest `|Im(sum_k u_k)|` seen so far.
    pub fn max_imag_residual(&self) -> f64 {
        self.max_imag_residual
    }

    /// Largest `|y|` seen so far.
    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    /// Imaginary residual below `1e-6` of the running output scale. Only
    /// meaningful for conjugate-closed modes.
    pub fn is_healthy(&self) -> bool {
        self.max_imag_residual <= 1e-6 * self.output_scale
    }

    /// Stored scalars (two per complex component).
    pub fn resident_scalars(&self) -> usize {
        2 * self.u.len()
    }

    pub fn step(&mut self, modes: &SsmModes, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(EtscError::NonFiniteInput(x));
        }
        debug_assert_eq!(self.u.len(), modes.hidden_size());
        let mut acc = Complex64::new(0.0, 0.0);
        for ((u, l), b) in self.u.iter_mut().zip(modes.lambda()).zip(modes.weights()) {
            *u = l * *u + b * x;
            acc += *u;
        }
        self.position += 1;
        self.max_imag_residual = self.max_imag_residual.max(acc.im.abs());
        self.output_scale = self.output_scale.max(acc.re.abs());
        Ok(acc.re)
    }
}

pub fn init_state(modes: &SsmModes) -> SsmState {
    SsmState::new(modes)
}

/// Runs a fresh state over the whole signal.
pub fn scan(modes: &SsmModes, x: &[f64]) -> Result<Vec<f64>> {
    let mut state = SsmState::new(modes);
    x.iter().map(|&v| state.step(modes, v)).collect()
}

/// Keeps one mode of every conjugate pair with doubled weight. Since the
/// output is the real part of the state sum, the real impulse response is
/// unchanged while the state roughly halves. Returns `None` when the modes
/// are not conjugate-closed.
pub fn compress_conjugate_pairs(modes: &SsmModes) -> Option<SsmModes> {
    let h = modes.hidden_size();
    let mut lambda = Vec::with_capacity(h / 2 + 1);
    let mut weights = Vec::with_capacity(h / 2 + 1);
    for k in 0..h {
        let p = modes.conjugate_partner(k)?;
        if p == k {
            lambda.push(modes.lambda()[k]);
            weights.push(modes.weights()[k]);
        } else if k < p {
            lambda.push(modes.lambda()[k]);
            weights.push(modes.weights()[k] * 2.0);
        }
    }
    SsmModes::new(lambda, weights, modes.gamma(), modes.origin_length()).ok()
}

/// `d` independent channels sharing one hidden size.
#[derive(Debug, Clone)]
pub struct ChannelBank {
    modes: Vec<SsmModes>,
    states: Vec<SsmState>,
}

impl ChannelBank {
    pub fn new(modes: Vec<SsmModes>) -> Result<Self> {
        let first = modes
            .first()
            .ok_or_else(|| EtscError::InvalidSize("channel bank needs at least one channel".into()))?;
        let h = first.hidden_size();
        if let Some(bad) = modes.iter().find(|m| m.hidden_size() != h) {
            return Err(EtscError::Shape { expected: h, actual: bad.hidden_size() });
        }
        let states = modes.iter().map(SsmState::new).collect();
        Ok(Self { modes, states })
    }

    pub fn channels(&self) -> usize {
        self.modes.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.modes[0].hidden_size()
    }

    pub fn modes(&self) -> &[SsmModes] {
        &self.modes
    }

    pub fn states(&self) -> &[SsmState] {
        &self.states
    }

    pub fn resident_scalars(&self) -> usize {
        self.states.iter().map(SsmState::resident_scalars).sum()
    }

    pub fn reset(&mut self) {
        self.states = self.modes.iter().map(SsmState::new).collect();
    }

    /// One step on every channel. Channels run in parallel when the bank is
    /// large enough to amortize the fork.
    pub fn step(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.modes.len() {
            return Err(EtscError::Shape { expected: self.modes.len(), actual: x.len() });
        }
        let work = self.modes.len() * self.hidden_size();
        if work >= 1 << 15 && rayon::current_num_threads() > 1 {
            self.states
                .par_iter_mut()
                .zip(self.modes.par_iter())
                .zip(x.par_iter())
                .map(|((s, m), &v)| s.step(m, v))
                .collect()
        } else {
            self.states
                .iter_mut()
                .zip(&self.modes)
                .zip(x)
                .map(|((s, m), &v)| s.step(m, v))
                .collect()
        }
    }
}
