//! Autoregressive inference over a stacked per-channel Toeplitz mixer.
//!
//! Three interchangeable strategies produce the same outputs inside the
//! kernel length:
//!
//! * `Origin` keeps the raw input history and recomputes every layer with
//!   the FFT apply on each new token.
//! * `Cache` keeps each layer's input history and computes only the newest
//!   output of each layer as a dot product against the kernel.
//! * `Ssm` converts every channel kernel to diagonal modes and steps the
//!   recurrence; no history is stored.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conversion::{convert_with_decay, etsc_convert, SsmModes};
use crate::dft::DftPlan;
use crate::error::{EtscError, Result};
use crate::ssm::ChannelBank;
use crate::toeplitz::{fft_size_for, Extension, ToeplitzKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Identity,
    /// Tanh approximation of GELU.
    Gelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Gelu => {
                const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
                0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
            }
        }
    }
}

/// How kernels are turned into modes for the SSM strategy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ConversionMethod {
    #[default]
    Exact,
    Decay(f64),
}

/// `L` layers of `d` per-channel causal kernels of common length `n`.
#[derive(Debug)]
pub struct StackedMixer {
    layers: Vec<Vec<ToeplitzKernel>>,
    /// One entry per boundary between consecutive layers.
    activations: Vec<Activation>,
    conversion: ConversionMethod,
    modes: OnceLock<Vec<Vec<SsmModes>>>,
}

impl Clone for StackedMixer {
    fn clone(&self) -> Self {
        let modes = OnceLock::new();
        if let Some(m) = self.modes.get() {
            let _ = modes.set(m.clone());
        }
        Self {
            layers: self.layers.clone(),
            activations: self.activations.clone(),
            conversion: self.conversion,
            modes,
        }
    }
}

impl StackedMixer {
    pub fn new(layers: Vec<Vec<ToeplitzKernel>>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| EtscError::InvalidSize("mixer needs at least one layer".into()))?;
        let d = first.len();
        if d == 0 {
            return Err(EtscError::InvalidSize("mixer needs at least one channel".into()));
        }
        let n = first[0].len();
        for layer in &layers {
            if layer.len() != d {
                return Err(EtscError::Shape { expected: d, actual: layer.len() });
            }
            if let Some(k) = layer.iter().find(|k| k.len() != n) {
                return Err(EtscError::Shape { expected: n, actual: k.len() });
            }
        }
        let activations = vec![Activation::Identity; layers.len() - 1];
        Ok(Self { layers, activations, conversion: ConversionMethod::Exact, modes: OnceLock::new() })
    }

    /// Kernels drawn from `N(0, 1/n)`, deterministic in `seed`.
    pub fn random(layers: usize, d: usize, n: usize, seed: u64) -> Result<Self> {
        Self::random_with_extension(layers, d, n, seed, Extension::Zeros)
    }

    pub fn random_with_extension(
        layers: usize,
        d: usize,
        n: usize,
        seed: u64,
        extension: Extension,
    ) -> Result<Self> {
        if layers == 0 || d == 0 || n == 0 {
            return Err(EtscError::InvalidSize("layers, channels and length must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (n as f64).sqrt();
        let kernels = (0..layers)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        let coeffs = (0..n)
                            .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); scale * z })
                            .collect();
                        ToeplitzKernel::with_extension(coeffs, extension)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(kernels)
    }

    /// Every kernel is the delta `[1, 0, ..., 0]`.
    pub fn identity(layers: usize, d: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(EtscError::InvalidSize("kernel length must be positive".into()));
        }
        let mut delta = vec![0.0; n];
        delta[0] = 1.0;
        let k = ToeplitzKernel::new(delta)?;
        Self::new(vec![vec![k; d]; layers])
    }

    pub fn with_activation(mut self, act: Activation) -> Self {
        self.activations.iter_mut().for_each(|a| *a = act);
        self
    }

    pub fn with_conversion(mut self, method: ConversionMethod) -> Self {
        self.conversion = method;
        self.modes = OnceLock::new();
        self
    }

    pub fn layers(&self) -> usize {
        self.layers.len()
    }

    pub fn channels(&self) -> usize {
        self.layers[0].len()
    }

    pub fn kernel_len(&self) -> usize {
        self.layers[0][0].len()
    }

    pub fn kernels(&self) -> &[Vec<ToeplitzKernel>] {
        &self.layers
    }

    fn activation_after(&self, layer: usize) -> Activation {
        self.activations.get(layer).copied().unwrap_or(Activation::Identity)
    }

    /// Per-layer, per-channel modes, converted on first use.
    pub fn modes(&self) -> Result<&[Vec<SsmModes>]> {
        if let Some(m) = self.modes.get() {
            return Ok(m);
        }
        use rayon::prelude::*;
        let method = self.conversion;
        let converted = self
            .layers
            .iter()
            .map(|layer| {
                layer
                    .par_iter()
                    .map(|k| match method {
                        ConversionMethod::Exact => etsc_convert(k.coeffs()),
                        ConversionMethod::Decay(g) => convert_with_decay(k.coeffs(), g),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.modes.get_or_init(|| converted))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Origin,
    Cache,
    Ssm,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Origin, Strategy::Cache, Strategy::Ssm];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Origin => "origin",
            Strategy::Cache => "cache",
            Strategy::Ssm => "ssm",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = EtscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "origin" => Ok(Strategy::Origin),
            "cache" => Ok(Strategy::Cache),
            "ssm" => Ok(Strategy::Ssm),
            other => Err(EtscError::InvalidArgument(format!("unknown strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
enum SessionState {
    /// `history[c]` is the raw input stream of channel `c`.
    Origin { history: Vec<Vec<f64>>, plan: Option<DftPlan> },
    /// `inputs[l][c]` is the input stream seen by layer `l`, channel `c`.
    Cache { inputs: Vec<Vec<Vec<f64>>> },
    Ssm { banks: Vec<ChannelBank> },
}

/// Streaming state for one strategy over one model.
#[derive(Debug, Clone)]
pub struct StreamSession<'m> {
    model: &'m StackedMixer,
    state: SessionState,
    position: usize,
    last_work: usize,
}

impl<'m> StreamSession<'m> {
    pub fn open(model: &'m StackedMixer, strategy: Strategy) -> Result<Self> {
        let d = model.channels();
        let state = match strategy {
            Strategy::Origin => SessionState::Origin { history: vec![Vec::new(); d], plan: None },
            Strategy::Cache => SessionState::Cache { inputs: vec![vec![Vec::new(); d]; model.layers()] },
            Strategy::Ssm => {
                let banks = model
                    .modes()?
                    .iter()
                    .map(|layer| ChannelBank::new(layer.clone()))
                    .collect::<Result<Vec<_>>>()?;
                SessionState::Ssm { banks }
            }
        };
        Ok(Self { model, state, position: 0, last_work: 0 })
    }

    pub fn strategy(&self) -> Strategy {
        match self.state {
            SessionState::Origin { .. } => Strategy::Origin,
            SessionState::Cache { .. } => Strategy::Cache,
            SessionState::Ssm { .. } => Strategy::Ssm,
        }
    }

    pub fn position(&self) -> usize {
        self.position
    }

    /// Scalars held between pushes, excluding model parameters. Origin is
    /// charged for the per-layer activations its recompute materializes.
    pub fn resident_scalars(&self) -> usize {
        let (d, layers) = (self.model.channels(), self.model.layers());
        match &self.state {
            SessionState::Origin { .. } => self.position * d * layers,
            SessionState::Cache { inputs } => inputs.iter().flatten().map(Vec::len).sum(),
            SessionState::Ssm { banks } => banks.iter().map(ChannelBank::resident_scalars).sum(),
        }
    }

    /// Scalar multiply-adds charged to the most recent push.
    pub fn last_push_work(&self) -> usize {
        self.last_work
    }

    /// Smallest `1e-6`-relative health check over every SSM channel; always
    /// true for history-based strategies.
    pub fn ssm_healthy(&self) -> bool {
        match &self.state {
            SessionState::Ssm { banks } => banks.iter().flat_map(|b| b.states()).all(|s| s.is_healthy()),
            _ => true,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.model.channels() {
            return Err(EtscError::Shape { expected: self.model.channels(), actual: x.len() });
        }
        if let Some(&bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(EtscError::NonFiniteInput(bad));
        }
        Ok(())
    }

    /// Feeds one token (one value per channel) and returns the top-layer
    /// output for it.
    pub fn push(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let model = self.model;
        let (d, layers) = (model.channels(), model.layers());
        let pos = self.position;
        let out = match &mut self.state {
            SessionState::Origin { history, plan } => {
                for (h, &v) in history.iter_mut().zip(x) {
                    h.push(v);
                }
                let m = pos + 1;
                let size = fft_size_for(m);
                if plan.as_ref().map(DftPlan::size) != Some(size) {
                    *plan = Some(DftPlan::new(size)?);
                }
                let plan = plan.as_ref().expect("plan set above");
                let mut current = history.clone();
                for (l, kernels) in model.layers.iter().enumerate() {
                    let act = if l + 1 < layers { model.activation_after(l) } else { Activation::Identity };
                    current = kernels
                        .iter()
                        .zip(&current)
                        .map(|(k, sig)| {
                            let mut y = k.apply_fft_planned(sig, plan);
                            y.iter_mut().for_each(|v| *v = act.apply(*v));
                            y
                        })
                        .collect();
                }
                self.last_work = layers * d * size * (size.trailing_zeros() as usize + 1);
                current.iter().map(|c| c[pos]).collect()
            }
            SessionState::Cache { inputs } => {
                let mut cur = x.to_vec();
                for (l, (kernels, hist)) in model.layers.iter().zip(inputs.iter_mut()).enumerate() {
                    let act = if l + 1 < layers { model.activation_after(l) } else { Activation::Identity };
                    for ((k, h), v) in kernels.iter().zip(hist.iter_mut()).zip(cur.iter_mut()) {
                        h.push(*v);
                        let y: f64 = h
                            .iter()
                            .enumerate()
                            .map(|(j, xj)| k.extended_coeff(pos - j) * xj)
                            .sum();
                        *v = act.apply(y);
                    }
                }
                self.last_work = layers * d * (pos + 1);
                cur
            }
            SessionState::Ssm { banks } => {
                let mut cur = x.to_vec();
                for (l, bank) in banks.iter_mut().enumerate() {
                    let act = if l + 1 < layers { model.activation_after(l) } else { Activation::Identity };
                    cur = bank.step(&cur)?;
                    cur.iter_mut().for_each(|v| *v = act.apply(*v));
                }
                self.last_work = banks.iter().map(|b| b.channels() * b.hidden_size()).sum();
                cur
            }
        };
        self.position += 1;
        Ok(out)
    }

    /// Feeds a block of tokens at once (`xs[p][c]`). The resulting session is
    /// equivalent to pushing them one by one; outputs are not returned.
    /// History-based strategies fill their buffers with one FFT pass per
    /// layer, so long prefixes are cheap to set up.
    pub fn prefill(&mut self, xs: &[Vec<f64>]) -> Result<()> {
        for x in xs {
            self.check_input(x)?;
        }
        let model = self.model;
        let layers = model.layers();
        match &mut self.state {
            SessionState::Origin { history, .. } => {
                for x in xs {
                    for (h, &v) in history.iter_mut().zip(x) {
                        h.push(v);
                    }
                }
            }
            SessionState::Cache { inputs } => {
                let start = self.position;
                let total = start + xs.len();
                // Layer 0 input is the raw stream.
                for x in xs {
                    for (h, &v) in inputs[0].iter_mut().zip(x) {
                        h.push(v);
                    }
                }
                for l in 0..layers.saturating_sub(1) {
                    let act = model.activation_after(l);
                    let outputs: Vec<Vec<f64>> = model.layers[l]
                        .iter()
                        .zip(&inputs[l])
                        .map(|(k, sig)| k.apply_fft(&sig[..total]))
                        .collect();
                    for (h, y) in inputs[l + 1].iter_mut().zip(outputs) {
                        h.extend(y[start..].iter().map(|&v| act.apply(v)));
                    }
                }
            }
            SessionState::Ssm { banks } => {
                for x in xs {
                    let mut cur = x.clone();
                    for (l, bank) in banks.iter_mut().enumerate() {
                        let act = if l + 1 < layers { model.activation_after(l) } else { Activation::Identity };
                        cur = bank.step(&cur)?;
                        cur.iter_mut().for_each(|v| *v = act.apply(*v));
                    }
                }
            }
        }
        self.position += xs.len();
        Ok(())
    }
}

pub fn open_session(model: &StackedMixer, strategy: Strategy) -> Result<StreamSession<'_>> {
    StreamSession::open(model, strategy)
}

/// Max relative deviation of one strategy pair, split at the kernel length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDeviation {
    pub a: Strategy,
    pub b: Strategy,
    /// Positions `< n`.
    pub in_range: f64,
    /// Positions `>= n`; `None` when no such positions were run.
    pub beyond: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ParityReport {
    pub positions: usize,
    pub kernel_len: usize,
    pub pairs: Vec<PairDeviation>,
    /// `outputs[strategy][p][c]` in `Strategy::ALL` order.
    pub outputs: Vec<Vec<Vec<f64>>>,
}

impl ParityReport {
    pub fn max_in_range(&self) -> f64 {
        self.pairs.iter().map(|p| p.in_range).fold(0.0, f64::max)
    }

    pub fn pair(&self, a: Strategy, b: Strategy) -> Option<&PairDeviation> {
        self.pairs.iter().find(|p| (p.a, p.b) == (a, b) || (p.a, p.b) == (b, a))
    }
}

/// `max |a - b|` over a position range, divided by the largest reference
/// magnitude in that range (absolute when the reference is all zero).
fn bucket_deviation(reference: &[Vec<f64>], a: &[Vec<f64>], b: &[Vec<f64>], range: std::ops::Range<usize>) -> f64 {
    let mut dev = 0.0f64;
    let mut scale = 0.0f64;
    for p in range {
        for c in 0..reference[p].len() {
            dev = dev.max((a[p][c] - b[p][c]).abs());
            scale = scale.max(reference[p][c].abs());
        }
    }
    if scale > 0.0 {
        dev / scale
    } else {
        dev
    }
}

/// Runs all three strategies over `inputs[p][c]` and compares them, with
/// origin outputs as the scale reference.
pub fn parity_report(model: &StackedMixer, inputs: &[Vec<f64>]) -> Result<ParityReport> {
    let run = |strategy: Strategy| -> Result<Vec<Vec<f64>>> {
        let mut s = StreamSession::open(model, strategy)?;
        inputs.iter().map(|x| s.push(x)).collect()
    };
    // Conversion first so the three runs do not race on the lazy init.
    model.modes()?;
    let (origin, (cache, ssm)) = rayon::join(
        || run(Strategy::Origin),
        || rayon::join(|| run(Strategy::Cache), || run(Strategy::Ssm)),
    );
    let outputs = vec![origin?, cache?, ssm?];
    let positions = inputs.len();
    let n = model.kernel_len();
    let split = n.min(positions);
    let mut pairs = Vec::new();
    for (i, j) in [(0usize, 1usize), (0, 2), (1, 2)] {
        let in_range = bucket_deviation(&outputs[0], &outputs[i], &outputs[j], 0..split);
        let beyond = (positions > n)
            .then(|| bucket_deviation(&outputs[0], &outputs[i], &outputs[j], n..positions));
        pairs.push(PairDeviation { a: Strategy::ALL[i], b: Strategy::ALL[j], in_range, beyond });
    }
    Ok(ParityReport { positions, kernel_len: n, pairs, outputs })
}

/// Standard-normal token stream `xs[p][c]`.
pub fn random_inputs(positions: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..positions)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}
