//! Synthetic kernel families standing in for trained kernels.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// i.i.d. standard normal coefficients.
    Random,
    /// `t_i = gamma^i * sum_j a_j cos(omega_j i + phi_j)`.
    DecaySinusoid { gamma: f64, components: usize },
}

impl Family {
    pub fn parse(name: &str, gamma: f64, components: usize) -> Result<Self> {
        match name {
            "random" => Ok(Family::Random),
            "decay-sinusoid" => {
                if !(gamma > 0.0 && gamma <= 1.0) {
                    return Err(CliError::Usage(format!("--gamma {gamma} must lie in (0, 1]")));
                }
                if components == 0 {
                    return Err(CliError::Usage("--components must be at least 1".into()));
                }
                Ok(Family::DecaySinusoid { gamma, components })
            }
            other => Err(CliError::Usage(format!(
                "unknown family '{other}' (expected random or decay-sinusoid)"
            ))),
        }
    }
}

impl FromStr for Family {
    type Err = CliError;

    /// Parses the family name with default decay parameters.
    fn from_str(s: &str) -> Result<Self> {
        Family::parse(s, 0.9, 4)
    }
}

/// One sinusoidal component of the decay family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub coeffs: Vec<f64>,
    /// Empty for the random family.
    pub components: Vec<Component>,
}

/// Deterministic kernel for `(family, n, seed)`.
pub fn generate(family: Family, n: usize, seed: u64) -> Result<Generated> {
    if n == 0 {
        return Err(etsc_core::EtscError::InvalidSize("kernel length must be at least 1".into()).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match family {
        Family::Random => Ok(Generated {
            coeffs: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
            components: Vec::new(),
        }),
        Family::DecaySinusoid { gamma, components } => {
            let comps: Vec<Component> = (0..components)
                .map(|_| Component {
                    amplitude: rng.gen_range(-1.0..1.0),
                    omega: rng.gen_range(0.0..PI),
                    phase: rng.gen_range(0.0..2.0 * PI),
                })
                .collect();
            let coeffs = (0..n)
                .map(|i| {
                    let x = i as f64;
                    let wave: f64 =
                        comps.iter().map(|c| c.amplitude * (c.omega * x + c.phase).cos()).sum();
                    gamma.powi(i as i32) * wave
                })
                .collect();
            Ok(Generated { coeffs, components: comps })
        }
    }
}
