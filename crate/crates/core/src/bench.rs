//! Conversion and inference benchmark sweeps with CSV output.
//!
//! Memory is reported as a model-based count of stored scalars, not process
//! RSS. Timings are the median over `repeats` runs after `warmup` runs.

use std::io::{Read, Write};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conversion::{etsc_convert, gradient_convert, reconstruct, GradientConfig};
use crate::error::{EtscError, Result};
use crate::inference::{random_inputs, StackedMixer, Strategy, StreamSession};
use crate::toeplitz::relative_error;

/// One CSV row. Empty fields mean "not applicable".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub strategy: String,
    pub n: usize,
    pub d: usize,
    pub layers: Option<usize>,
    pub position: Option<usize>,
    pub seconds_per_token: Option<f64>,
    pub resident_scalars: Option<usize>,
    pub conversion_seconds: Option<f64>,
    pub relative_error: Option<f64>,
}

pub const CSV_HEADER: &str =
    "strategy,n,d,layers,position,seconds_per_token,resident_scalars,conversion_seconds,relative_error";

/// Gradient-baseline settings used inside conversion sweeps.
#[derive(Debug, Clone)]
pub struct GradientBench {
    pub iterations: usize,
    /// Fixed step; `None` uses [`GradientConfig::for_hidden`] so large grid
    /// points do not diverge.
    pub step_size: Option<f64>,
    pub seed: u64,
    /// Channels per grid point run through gradient descent (it is far
    /// slower than the exact route).
    pub channels: usize,
    /// Hidden size; `None` means `n`.
    pub hidden: Option<usize>,
}

impl GradientBench {
    pub fn config_for(&self, h: usize) -> GradientConfig {
        let base = GradientConfig::for_hidden(h);
        GradientConfig {
            iterations: self.iterations,
            step_size: self.step_size.unwrap_or(base.step_size),
            seed: self.seed,
            record_every: base.record_every,
        }
    }
}

impl Default for GradientBench {
    fn default() -> Self {
        Self {
            iterations: 200,
            step_size: None,
            seed: 0,
            channels: 1,
            hidden: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub n_grid: Vec<usize>,
    pub d_grid: Vec<usize>,
    pub layer_grid: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub seed: u64,
    pub repeats: usize,
    pub warmup: usize,
    /// Inference checkpoints; `None` picks `n/4, n/2, n-1`.
    pub positions: Option<Vec<usize>>,
    pub gradient: GradientBench,
    /// Run grid points in parallel (timings get noisier).
    pub parallel: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            n_grid: vec![64, 256, 1024],
            d_grid: vec![64],
            layer_grid: vec![2],
            strategies: Strategy::ALL.to_vec(),
            seed: 0,
            repeats: 5,
            warmup: 2,
            positions: None,
            gradient: GradientBench::default(),
            parallel: false,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.d_grid.is_empty() || self.layer_grid.is_empty() {
            return Err(EtscError::InvalidArgument("sweep grids must be nonempty".into()));
        }
        if self.n_grid.iter().chain(&self.d_grid).chain(&self.layer_grid).any(|&v| v == 0) {
            return Err(EtscError::InvalidArgument("grid values must be positive".into()));
        }
        if self.repeats < 3 {
            return Err(EtscError::InvalidArgument("at least 3 repeats are required".into()));
        }
        Ok(())
    }

    fn checkpoints(&self, n: usize) -> Vec<usize> {
        let mut p = match &self.positions {
            Some(p) => p.clone(),
            None => vec![n / 4, n / 2, n.saturating_sub(1)],
        };
        p.sort_unstable();
        p.dedup();
        p
    }
}

/// Median of `f`'s wall-clock seconds over `repeats` after `warmup` calls.
pub fn median_seconds<F: FnMut()>(warmup: usize, repeats: usize, mut f: F) -> f64 {
    for _ in 0..warmup {
        f();
    }
    let mut times: Vec<f64> = (0..repeats.max(1))
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

fn grid_seed(seed: u64, a: usize, b: usize, c: usize) -> u64 {
    seed ^ ((a as u64) << 40) ^ ((b as u64) << 20) ^ (c as u64)
}

fn random_kernels(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..d)
        .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

fn conversion_point(spec: &SweepSpec, n: usize, d: usize) -> Result<Vec<BenchRecord>> {
    let kernels = random_kernels(n, d, grid_seed(spec.seed, n, d, 0));

    let mut etsc_err = 0.0f64;
    for t in &kernels {
        let m = etsc_convert(t)?;
        etsc_err = etsc_err.max(relative_error(t, &reconstruct(&m, n))?);
    }
    let etsc_secs = median_seconds(spec.warmup, spec.repeats, || {
        for t in &kernels {
            std::hint::black_box(etsc_convert(t).expect("validated above"));
        }
    }) / d as f64;

    let mut rows = vec![BenchRecord {
        strategy: "etsc".into(),
        n,
        d,
        layers: None,
        position: None,
        seconds_per_token: None,
        resident_scalars: None,
        conversion_seconds: Some(etsc_secs),
        relative_error: Some(etsc_err),
    }];

    let g = &spec.gradient;
    if g.channels > 0 {
        let h = g.hidden.unwrap_or(n).max(1);
        let mut grad_err = 0.0f64;
        let used = &kernels[..g.channels.min(d)];
        let start = Instant::now();
        for t in used {
            let out = gradient_convert(t, h, &g.config_for(h))?;
            grad_err = grad_err.max(relative_error(t, &reconstruct(&out.modes, n))?);
        }
        let grad_secs = start.elapsed().as_secs_f64() / used.len() as f64;
        rows.push(BenchRecord {
            strategy: "gradient".into(),
            n,
            d,
            layers: None,
            position: None,
            seconds_per_token: None,
            resident_scalars: None,
            conversion_seconds: Some(grad_secs),
            relative_error: Some(grad_err),
        });
    }
    Ok(rows)
}

/// Exact and gradient conversion per `(n, d)`: time per kernel and the
/// worst relative reconstruction error across channels.
pub fn bench_conversion(spec: &SweepSpec) -> Result<Vec<BenchRecord>> {
    spec.validate()?;
    let points: Vec<(usize, usize)> = spec
        .n_grid
        .iter()
        .flat_map(|&n| spec.d_grid.iter().map(move |&d| (n, d)))
        .collect();
    let chunks: Vec<Result<Vec<BenchRecord>>> = if spec.parallel {
        points.par_iter().map(|&(n, d)| conversion_point(spec, n, d)).collect()
    } else {
        points.iter().map(|&(n, d)| conversion_point(spec, n, d)).collect()
    };
    Ok(chunks.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

/// Times one push at `position` for a prefilled session.
pub fn time_push_at(
    model: &StackedMixer,
    strategy: Strategy,
    position: usize,
    warmup: usize,
    repeats: usize,
    seed: u64,
) -> Result<(f64, usize)> {
    let d = model.channels();
    let inputs = random_inputs(position + 1, d, seed);
    let mut session = StreamSession::open(model, strategy)?;
    session.prefill(&inputs[..position])?;
    let resident = session.resident_scalars();
    let token = &inputs[position];
    let mut failure = None;
    let mut clones: Vec<StreamSession<'_>> = Vec::new();
    let secs = {
        let mut run = || {
            // Fresh clone each run so every measurement is at `position`.
            let mut s = clones.pop().unwrap_or_else(|| session.clone());
            if let Err(e) = s.push(token) {
                failure = Some(e);
            }
            std::hint::black_box(&s);
        };
        median_seconds(warmup, repeats, &mut run)
    };
    drop(clones);
    match failure {
        Some(e) => Err(e),
        None => Ok((secs, resident)),
    }
}

fn inference_point(spec: &SweepSpec, n: usize, d: usize, layers: usize) -> Result<Vec<BenchRecord>> {
    let model = StackedMixer::random(layers, d, n, grid_seed(spec.seed, n, d, layers))?;
    let mut rows = Vec::new();
    for &strategy in &spec.strategies {
        let conversion_seconds = if strategy == Strategy::Ssm {
            let start = Instant::now();
            model.modes()?;
            Some(start.elapsed().as_secs_f64())
        } else {
            None
        };
        for position in spec.checkpoints(n) {
            let (secs, resident) =
                time_push_at(&model, strategy, position, spec.warmup, spec.repeats, spec.seed ^ 0x5eed)?;
            rows.push(BenchRecord {
                strategy: strategy.name().into(),
                n,
                d,
                layers: Some(layers),
                position: Some(position),
                seconds_per_token: Some(secs),
                resident_scalars: Some(resident),
                conversion_seconds,
                relative_error: None,
            });
        }
    }
    Ok(rows)
}

/// Per-token latency and resident scalars for each strategy at each
/// checkpoint position.
pub fn bench_inference(spec: &SweepSpec) -> Result<Vec<BenchRecord>> {
    spec.validate()?;
    let points: Vec<(usize, usize, usize)> = spec
        .n_grid
        .iter()
        .flat_map(|&n| {
            spec.d_grid
                .iter()
                .flat_map(move |&d| spec.layer_grid.iter().map(move |&l| (n, d, l)))
        })
        .collect();
    let chunks: Vec<Result<Vec<BenchRecord>>> = if spec.parallel {
        points.par_iter().map(|&(n, d, l)| inference_point(spec, n, d, l)).collect()
    } else {
        points.iter().map(|&(n, d, l)| inference_point(spec, n, d, l)).collect()
    };
    Ok(chunks.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

pub fn write_csv<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<BenchRecord>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|rec| rec.map_err(EtscError::from)).collect()
}
