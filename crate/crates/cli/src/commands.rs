//! Subcommand implementations. Each takes parsed arguments and a writer for
//! standard output and returns the process exit code on success.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use etsc_core::bench::{bench_conversion, bench_inference, write_csv, GradientBench, SweepSpec};
use etsc_core::inference::{random_inputs, Activation, ConversionMethod};
use etsc_core::toeplitz::{reconstruction_error, ErrorMetric};
use etsc_core::{
    augment, convert_with_decay, etsc_convert, gradient_convert, reconstruct, truncate, Complex64,
    Extension, GradientConfig, SsmModes, StackedMixer, Strategy, ToeplitzKernel,
};
use serde_json::json;

use crate::error::{CliError, Result};
use crate::formats::{self, Encoding};
use crate::generate::{generate, Family};

/// In-range parity threshold for `parity`.
pub const PARITY_TOLERANCE: f64 = 1e-5;

fn out_err(e: std::io::Error) -> CliError {
    CliError::io("<stdout>", e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Binary,
}

fn encoding(path: &Path, explicit: Option<FormatArg>) -> Encoding {
    match explicit {
        Some(FormatArg::Json) => Encoding::Json,
        Some(FormatArg::Binary) => Encoding::Binary,
        None => Encoding::from_path(path),
    }
}

// ---- gen ----

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Kernel length.
    #[arg(long)]
    pub n: usize,
    /// Number of kernels; more than one writes `<stem>_<c>.<ext>`.
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `random` or `decay-sinusoid`.
    #[arg(long, default_value = "random")]
    pub family: String,
    /// Envelope decay for the decay-sinusoid family.
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    /// Sinusoidal components for the decay-sinusoid family.
    #[arg(long, default_value_t = 4)]
    pub components: usize,
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

/// Output path of channel `c` out of `d`.
pub fn channel_path(base: &Path, c: usize, d: usize) -> PathBuf {
    if d == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("kernel");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{c}.{ext}"),
        None => format!("{stem}_{c}"),
    };
    base.with_file_name(name)
}

pub fn cmd_gen(args: &GenArgs, out: &mut dyn Write) -> Result<i32> {
    let family = Family::parse(&args.family, args.gamma, args.components)?;
    if args.d == 0 {
        return Err(CliError::Usage("--d must be at least 1".into()));
    }
    let enc = encoding(&args.output, args.format);
    for c in 0..args.d {
        // Channel seeds are spread so neighbouring --seed values do not overlap.
        let seed = args.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(c as u64);
        let g = generate(family, args.n, seed)?;
        let kernel = ToeplitzKernel::new(g.coeffs)?;
        let path = channel_path(&args.output, c, args.d);
        formats::write_kernel(&path, &kernel, enc)?;
        writeln!(out, "wrote {}", path.display()).map_err(out_err)?;
    }
    Ok(0)
}

// ---- convert ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Etsc,
    Gradient,
    EtscDecay,
}

#[derive(Debug, Clone, Args)]
pub struct ConvertArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "etsc")]
    pub method: Method,
    /// Hidden size. For etsc, smaller than n truncates and larger zero-pads;
    /// for gradient it defaults to n.
    #[arg(long)]
    pub h: Option<usize>,
    /// Pole decay for etsc-decay.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Gradient iterations.
    #[arg(long, default_value_t = 10_000)]
    pub iters: usize,
    /// Gradient step size; defaults to min(1e-2, 0.2/h).
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

fn convert_modes(args: &ConvertArgs, t: &[f64]) -> Result<SsmModes> {
    let n = t.len();
    match args.method {
        Method::Etsc => {
            if args.gamma.is_some() {
                return Err(CliError::Usage("--gamma only applies to etsc-decay".into()));
            }
            let h = args.h.unwrap_or(n);
            if h == 0 {
                return Err(CliError::Usage("--h must be at least 1".into()));
            }
            if h < n {
                Ok(truncate(&etsc_convert(t)?, h)?.modes)
            } else if h > n {
                let mut padded = t.to_vec();
                padded.resize(h, 0.0);
                let m = etsc_convert(&padded)?;
                Ok(SsmModes::new(m.lambda().to_vec(), m.weights().to_vec(), 1.0, n)?)
            } else {
                Ok(etsc_convert(t)?)
            }
        }
        Method::EtscDecay => {
            let gamma = args
                .gamma
                .ok_or_else(|| CliError::Usage("etsc-decay needs --gamma".into()))?;
            if args.h.is_some_and(|h| h != n) {
                return Err(CliError::Usage("etsc-decay always uses h = n".into()));
            }
            Ok(convert_with_decay(t, gamma)?)
        }
        Method::Gradient => {
            let h = args.h.unwrap_or(n);
            if h == 0 {
                return Err(CliError::Usage("--h must be at least 1".into()));
            }
            let base = GradientConfig::for_hidden(h);
            let cfg = GradientConfig {
                iterations: args.iters,
                step_size: args.step.unwrap_or(base.step_size),
                seed: args.seed,
                ..base
            };
            Ok(gradient_convert(t, h, &cfg)?.modes)
        }
    }
}

pub fn cmd_convert(args: &ConvertArgs, out: &mut dyn Write) -> Result<i32> {
    let kernel = formats::read_kernel(&args.input)?;
    let t = kernel.coeffs();
    let start = Instant::now();
    let modes = convert_modes(args, t)?;
    let secs = start.elapsed().as_secs_f64();
    formats::write_modes(&args.output, &modes, encoding(&args.output, args.format))?;

    let fit = reconstruction_error(t, &reconstruct(&modes, t.len()))?;
    match fit {
        ErrorMetric::Relative(v) => writeln!(out, "rel_error={v:e}"),
        ErrorMetric::Absolute(v) => writeln!(out, "abs_error={v:e} zero_kernel=true"),
    }
    .map_err(out_err)?;
    writeln!(out, "h={} conversion_seconds={secs:e}", modes.hidden_size()).map_err(out_err)?;
    Ok(0)
}

// ---- verify ----

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub kernel: PathBuf,
    #[arg(long)]
    pub modes: PathBuf,
    /// Passes iff the reconstruction error is at most this (and positive).
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &'static str, value: f64, threshold: f64) -> Self {
        Check { name, value, threshold, pass: value <= threshold }
    }

    fn below(name: &'static str, value: f64, threshold: f64) -> Self {
        Check { name, value, threshold, pass: value < threshold }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub metric: ErrorMetric,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let checks: serde_json::Map<String, serde_json::Value> = self
            .checks
            .iter()
            .map(|c| {
                let v = json!({"value": c.value, "threshold": c.threshold, "pass": c.pass});
                (c.name.to_string(), v)
            })
            .collect();
        json!({
            "metric": if self.metric.is_absolute() { "absolute" } else { "relative" },
            "error": self.metric.value(),
            "checks": checks,
            "pass": self.pass(),
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Checks a kernel/modes pair. The identity checks run on the undecayed
/// problem: kernel coefficients scaled by `gamma^-i`, poles divided by gamma.
pub fn verify_pair(kernel: &ToeplitzKernel, modes: &SsmModes, tol: f64) -> Result<VerifyReport> {
    let t = kernel.coeffs();
    let n = t.len();
    if modes.origin_length() != n {
        return Err(CliError::Compatibility(format!(
            "modes were converted from a length-{} kernel, kernel has n = {n}",
            modes.origin_length()
        )));
    }
    let metric = reconstruction_error(t, &reconstruct(modes, n))?;
    let mut checks = vec![Check {
        name: "reconstruction",
        value: metric.value(),
        threshold: tol,
        // A zero tolerance cannot be met in floating point and always fails.
        pass: tol > 0.0 && metric.value() <= tol,
    }];

    let gamma = modes.gamma();
    let rescaled: Vec<f64> = t.iter().enumerate().map(|(i, v)| v * gamma.powi(-(i as i32))).collect();
    let poles: Vec<Complex64> = modes.lambda().iter().map(|l| l / gamma).collect();
    let big_n = n + 1;
    let scale = norm(&rescaled);
    let row = SsmModes::new(poles, modes.weights().to_vec(), 1.0, n)
        .map(|undecayed| reconstruct(&undecayed, big_n))
        .unwrap_or_else(|_| vec![Complex64::new(f64::NAN, f64::NAN); big_n]);

    let dc = row.iter().sum::<Complex64>().norm();
    checks.push(Check::below("dc_vanishing", dc, 1e-9 * scale.max(f64::MIN_POSITIVE) * (big_n as f64).sqrt()));

    let neg_sum = -rescaled.iter().sum::<f64>();
    let row_dev = (row[n] - Complex64::new(neg_sum, 0.0)).norm();
    checks.push(Check::at_most("augmented_row", row_dev, 1e-8 * scale));

    let aug_energy: f64 = augment(&rescaled).iter().map(|v| v * v).sum();
    let weight_energy: f64 = big_n as f64 * modes.weights().iter().map(|b| b.norm_sqr()).sum::<f64>();
    let parseval = if aug_energy > 0.0 {
        ((aug_energy - weight_energy) / aug_energy).abs()
    } else {
        weight_energy
    };
    checks.push(Check::at_most("parseval", parseval, 1e-9));

    // Non-finite values never pass.
    for c in &mut checks {
        c.pass &= c.value.is_finite();
    }
    Ok(VerifyReport { metric, checks })
}

pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    let kernel = formats::read_kernel(&args.kernel)?;
    let modes = formats::read_modes(&args.modes)?;
    let report = verify_pair(&kernel, &modes, args.tol)?;
    writeln!(out, "{}", report.to_json()).map_err(out_err)?;
    Ok(if report.pass() { 0 } else { 1 })
}

// ---- parity ----

#[derive(Debug, Clone, Args)]
pub struct ParityArgs {
    #[arg(long = "layers", visible_alias = "L", default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, default_value_t = 256)]
    pub n: usize,
    /// Positions to stream; defaults to n.
    #[arg(long)]
    pub positions: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use delta kernels instead of random ones.
    #[arg(long)]
    pub identity: bool,
    /// Extend kernels past n by `t_i = gamma^(i-n+1) t_(n-1)` instead of zeros.
    #[arg(long)]
    pub extension_gamma: Option<f64>,
    /// Convert with decayed poles instead of the exact construction.
    #[arg(long)]
    pub decay: Option<f64>,
    /// GELU between layers.
    #[arg(long)]
    pub gelu: bool,
}

pub fn cmd_parity(args: &ParityArgs, out: &mut dyn Write) -> Result<i32> {
    let extension = args.extension_gamma.map_or(Extension::Zeros, Extension::Decay);
    let mut model = if args.identity {
        StackedMixer::identity(args.layers, args.d, args.n)?
    } else {
        StackedMixer::random_with_extension(args.layers, args.d, args.n, args.seed, extension)?
    };
    if args.gelu {
        model = model.with_activation(Activation::Gelu);
    }
    if let Some(g) = args.decay {
        model = model.with_conversion(ConversionMethod::Decay(g));
    }
    let positions = args.positions.unwrap_or(args.n);
    if positions == 0 {
        return Err(CliError::Usage("--positions must be at least 1".into()));
    }
    let inputs = random_inputs(positions, args.d, args.seed ^ 0x1a7e);
    let report = etsc_core::parity_report(&model, &inputs)?;
    for p in &report.pairs {
        let mut line = format!("pair={}-{} in_range={:e}", p.a.name(), p.b.name(), p.in_range);
        if let Some(beyond) = p.beyond {
            line.push_str(&format!(" beyond={beyond:e}"));
            if p.b == Strategy::Ssm {
                line.push_str(" beyond_expected=true");
            }
        }
        writeln!(out, "{line}").map_err(out_err)?;
    }
    if positions > args.n {
        writeln!(
            out,
            "note: past n the ssm repeats its converted kernel, so beyond-n deviations are expected"
        )
        .map_err(out_err)?;
    }
    let max = report.max_in_range();
    let pass = max < PARITY_TOLERANCE;
    writeln!(out, "max_in_range={max:e} pass={pass}").map_err(out_err)?;
    Ok(if pass { 0 } else { 1 })
}

// ---- bench ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchKind {
    Inference,
    Conversion,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "inference")]
    pub kind: BenchKind,
    #[arg(long, value_delimiter = ',', default_value = "64,256,1024")]
    pub grid_n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub d: Vec<usize>,
    #[arg(long = "layers", visible_alias = "L", value_delimiter = ',', default_value = "2")]
    pub layers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "origin,cache,ssm")]
    pub strategies: Vec<String>,
    /// Inference checkpoints; defaults to n/4, n/2, n-1 per grid point.
    #[arg(long, value_delimiter = ',')]
    pub positions: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub grad_iters: usize,
    #[arg(long)]
    pub grad_step: Option<f64>,
    /// Kernels per grid point run through gradient descent (0 disables).
    #[arg(long, default_value_t = 1)]
    pub grad_channels: usize,
    #[arg(long)]
    pub grad_h: Option<usize>,
    /// Run grid points concurrently.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long, short)]
    pub output: PathBuf,
}

pub fn sweep_spec(args: &BenchArgs) -> Result<SweepSpec> {
    let strategies = args
        .strategies
        .iter()
        .map(|s| s.parse::<Strategy>())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let spec = SweepSpec {
        n_grid: args.grid_n.clone(),
        d_grid: args.d.clone(),
        layer_grid: args.layers.clone(),
        strategies,
        seed: args.seed,
        repeats: args.repeats,
        warmup: args.warmup,
        positions: args.positions.clone(),
        gradient: GradientBench {
            iterations: args.grad_iters,
            step_size: args.grad_step,
            seed: args.seed,
            channels: args.grad_channels,
            hidden: args.grad_h,
        },
        parallel: args.parallel,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<i32> {
    let spec = sweep_spec(args)?;
    let rows = match args.kind {
        BenchKind::Inference => bench_inference(&spec)?,
        BenchKind::Conversion => bench_conversion(&spec)?,
    };
    let file = File::create(&args.output).map_err(|e| CliError::io(&args.output, e))?;
    let mut w = BufWriter::new(file);
    write_csv(&rows, &mut w)?;
    w.flush().map_err(|e| CliError::io(&args.output, e))?;
    writeln!(out, "rows={} output={}", rows.len(), args.output.display()).map_err(out_err)?;
    Ok(0)
}
