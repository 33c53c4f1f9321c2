use std::path::Path;
use std::process::{Command, Output};

use etsc_cli::commands::{verify_pair, channel_path};
use etsc_cli::formats::{
    kernel_from_binary, kernel_from_json, kernel_to_binary, kernel_to_json, modes_from_binary,
    modes_from_json, modes_to_binary, modes_to_json, read_kernel, read_modes,
};
use etsc_core::bench::read_csv;
use etsc_core::{etsc_convert, Complex64, Extension, SsmModes, ToeplitzKernel};
use proptest::prelude::*;
use tempfile::TempDir;

fn etsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etsc")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn metric(out: &str, key: &str) -> f64 {
    let prefix = format!("{key}=");
    out.split_whitespace()
        .find_map(|tok| tok.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
        .parse()
        .unwrap()
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(5e-324),
        Just(f64::MAX),
    ]
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn cbits(v: &[Complex64]) -> Vec<(u64, u64)> {
    v.iter().map(|z| (z.re.to_bits(), z.im.to_bits())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_round_trips_bit_exact(coeffs in prop::collection::vec(finite(), 1..200)) {
        let k = ToeplitzKernel::new(coeffs).unwrap();
        let path = Path::new("mem");
        let via_json = kernel_from_json(path, kernel_to_json(&k).as_bytes()).unwrap();
        let via_bin = kernel_from_binary(path, &kernel_to_binary(&k).unwrap()).unwrap();
        prop_assert_eq!(bits(via_json.coeffs()), bits(k.coeffs()));
        prop_assert_eq!(bits(via_bin.coeffs()), bits(k.coeffs()));
        // JSON -> binary -> JSON is textually identical.
        let again = kernel_from_binary(path, &kernel_to_binary(&via_json).unwrap()).unwrap();
        prop_assert_eq!(kernel_to_json(&again), kernel_to_json(&k));
    }

    #[test]
    fn modes_round_trip_bit_exact(
        raw in prop::collection::vec((finite(), finite(), finite(), finite()), 1..100),
        gamma in (1e-300f64..=1.0),
        origin in 0usize..100_000,
    ) {
        let lambda: Vec<Complex64> = raw.iter().map(|&(a, b, _, _)| Complex64::new(a, b)).collect();
        let weights: Vec<Complex64> = raw.iter().map(|&(_, _, c, d)| Complex64::new(c, d)).collect();
        let m = SsmModes::new(lambda, weights, gamma, origin).unwrap();
        let path = Path::new("mem");
        let via_json = modes_from_json(path, modes_to_json(&m).as_bytes()).unwrap();
        let via_bin = modes_from_binary(path, &modes_to_binary(&m).unwrap()).unwrap();
        for r in [&via_json, &via_bin] {
            prop_assert_eq!(cbits(r.lambda()), cbits(m.lambda()));
            prop_assert_eq!(cbits(r.weights()), cbits(m.weights()));
            prop_assert_eq!(r.gamma().to_bits(), m.gamma().to_bits());
            prop_assert_eq!(r.origin_length(), m.origin_length());
        }
    }

    #[test]
    fn truncated_binary_never_panics(cut in 0usize..60) {
        let k = ToeplitzKernel::new(vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let b = kernel_to_binary(&k).unwrap();
        let cut = cut.min(b.len() - 1);
        prop_assert!(kernel_from_binary(Path::new("mem"), &b[..cut]).is_err());
    }
}

#[test]
fn decay_extension_survives_json() {
    let k = ToeplitzKernel::with_extension(vec![0.25, -1.0], Extension::Decay(0.5)).unwrap();
    let back = kernel_from_json(Path::new("mem"), kernel_to_json(&k).as_bytes()).unwrap();
    assert_eq!(back, k);
}

#[test]
fn gen_is_deterministic() {
    let dir = TempDir::new().unwrap();
    for name in ["a.json", "b.json"] {
        assert!(etsc(&["gen", "--n", "8", "--seed", "7", "-o", &p(&dir, name)]).status.success());
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    let b = std::fs::read(dir.path().join("b.json")).unwrap();
    assert_eq!(a, b);
    assert!(etsc(&["gen", "--n", "8", "--seed", "8", "-o", &p(&dir, "c.json")]).status.success());
    assert_ne!(a, std::fs::read(dir.path().join("c.json")).unwrap());
}

#[test]
fn gen_rejects_zero_length() {
    let dir = TempDir::new().unwrap();
    let o = etsc(&["gen", "--n", "0", "-o", &p(&dir, "z.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid size"));
}

#[test]
fn gen_unwritable_path_is_io_error() {
    let o = etsc(&["gen", "--n", "4", "-o", "/nonexistent-dir/k.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent-dir/k.json"));
}

#[test]
fn gen_decay_sinusoid_envelope_is_geometric() {
    let dir = TempDir::new().unwrap();
    let path = p(&dir, "k.bin");
    let o = etsc(&["gen", "--n", "300", "--family", "decay-sinusoid", "--gamma", "0.9", "-o", &path]);
    assert!(o.status.success());
    let k = read_kernel(Path::new(&path)).unwrap();
    // Four components with |a_j| < 1 bound the envelope by 4 * 0.9^i.
    for (i, t) in k.coeffs().iter().enumerate() {
        assert!(t.abs() <= 4.0 * 0.9f64.powi(i as i32), "i={i}");
    }
    assert!(k.coeffs()[299].abs() < 1e-12);
}

#[test]
fn gen_multi_channel_paths() {
    let dir = TempDir::new().unwrap();
    let base = p(&dir, "k.bin");
    assert!(etsc(&["gen", "--n", "16", "--d", "3", "-o", &base]).status.success());
    let mut seen = Vec::new();
    for c in 0..3 {
        let path = channel_path(Path::new(&base), c, 3);
        assert!(path.ends_with(format!("k_{c}.bin")));
        seen.push(read_kernel(&path).unwrap());
    }
    assert_ne!(seen[0], seen[1]);
}

#[test]
fn convert_then_verify_passes() {
    let dir = TempDir::new().unwrap();
    let (k, m) = (p(&dir, "k.json"), p(&dir, "m.bin"));
    assert!(etsc(&["gen", "--n", "257", "--seed", "1", "-o", &k]).status.success());
    let o = etsc(&["convert", "-i", &k, "--method", "etsc", "-o", &m]);
    assert!(o.status.success());
    assert!(metric(&stdout(&o), "rel_error") < 1e-8);
    let v = etsc(&["verify", "--kernel", &k, "--modes", &m, "--tol", "1e-6"]);
    assert_eq!(v.status.code(), Some(0), "{}", stdout(&v));
    let report: serde_json::Value = serde_json::from_str(stdout(&v).trim()).unwrap();
    assert_eq!(report["pass"], true);
    for check in ["reconstruction", "dc_vanishing", "augmented_row", "parseval"] {
        assert_eq!(report["checks"][check]["pass"], true, "{check}");
    }
}

#[test]
fn verify_zero_tolerance_fails() {
    let dir = TempDir::new().unwrap();
    let (k, m) = (p(&dir, "k.json"), p(&dir, "m.json"));
    etsc(&["gen", "--n", "32", "-o", &k]);
    etsc(&["convert", "-i", &k, "-o", &m]);
    let v = etsc(&["verify", "--kernel", &k, "--modes", &m, "--tol", "0"]);
    assert_eq!(v.status.code(), Some(1));
}

#[test]
fn verify_detects_perturbed_weight() {
    let t: Vec<f64> = (0..64).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
    let kernel = ToeplitzKernel::new(t.clone()).unwrap();
    let mut modes = etsc_convert(&t).unwrap();
    assert!(verify_pair(&kernel, &modes, 1e-6).unwrap().pass());
    modes.weights_mut()[3] += Complex64::new(0.1, 0.0);
    let report = verify_pair(&kernel, &modes, 1e-6).unwrap();
    assert!(!report.pass());
    assert!(!report.check("parseval").unwrap().pass);
}

#[test]
fn verify_decayed_modes() {
    let t: Vec<f64> = (0..40).map(|i| 0.8f64.powi(i) * (0.3 * i as f64).cos()).collect();
    let kernel = ToeplitzKernel::new(t.clone()).unwrap();
    let modes = etsc_core::convert_with_decay(&t, 0.95).unwrap();
    let report = verify_pair(&kernel, &modes, 1e-6).unwrap();
    assert!(report.pass(), "{:?}", report.checks);
}

#[test]
fn verify_incompatible_lengths() {
    let dir = TempDir::new().unwrap();
    let (k1, k2, m) = (p(&dir, "a.json"), p(&dir, "b.json"), p(&dir, "m.json"));
    etsc(&["gen", "--n", "32", "-o", &k1]);
    etsc(&["gen", "--n", "33", "-o", &k2]);
    etsc(&["convert", "-i", &k1, "-o", &m]);
    let v = etsc(&["verify", "--kernel", &k2, "--modes", &m]);
    assert_eq!(v.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&v.stderr).contains("incompatible"));
}

#[test]
fn gradient_is_worse_than_etsc() {
    let dir = TempDir::new().unwrap();
    let k = p(&dir, "k.bin");
    etsc(&["gen", "--n", "512", "--seed", "4", "-o", &k]);
    let e = etsc(&["convert", "-i", &k, "--method", "etsc", "-o", &p(&dir, "e.json")]);
    let g = etsc(&["convert", "-i", &k, "--method", "gradient", "--iters", "100", "-o", &p(&dir, "g.json")]);
    assert!(g.status.success());
    assert!(metric(&stdout(&g), "rel_error") > metric(&stdout(&e), "rel_error"));
}

#[test]
fn convert_zero_kernel_reports_absolute_error() {
    let dir = TempDir::new().unwrap();
    let k = p(&dir, "zero.json");
    std::fs::write(
        &k,
        r#"{"format":"etsc-kernel","version":1,"n":4,"extension":{"kind":"zeros"},"coeffs":[0,0,0,0]}"#,
    )
    .unwrap();
    let o = etsc(&["convert", "-i", &k, "-o", &p(&dir, "m.json")]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("zero_kernel=true"), "{s}");
    assert_eq!(metric(&s, "abs_error"), 0.0);
}

#[test]
fn convert_truncated_and_decayed() {
    let dir = TempDir::new().unwrap();
    let k = p(&dir, "k.json");
    etsc(&["gen", "--n", "64", "--family", "decay-sinusoid", "--gamma", "0.8", "-o", &k]);
    let m = p(&dir, "t.json");
    let o = etsc(&["convert", "-i", &k, "--h", "16", "-o", &m]);
    assert!(o.status.success());
    let h = read_modes(Path::new(&m)).unwrap().hidden_size();
    assert!(h == 16 || h == 17);
    let o = etsc(&["convert", "-i", &k, "--method", "etsc-decay", "--gamma", "0.99", "-o", &m]);
    assert!(o.status.success());
    assert!(metric(&stdout(&o), "rel_error") < 1e-8);
    assert_eq!(read_modes(Path::new(&m)).unwrap().gamma(), 0.99);
    let o = etsc(&["convert", "-i", &k, "--method", "etsc-decay", "-o", &m]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_inputs_name_the_location() {
    let dir = TempDir::new().unwrap();
    let bad_json = p(&dir, "bad.json");
    std::fs::write(
        &bad_json,
        r#"{"format":"etsc-kernel","version":1,"n":2,"extension":{"kind":"zeros"},"coeffs":[1.0,true]}"#,
    )
    .unwrap();
    let o = etsc(&["convert", "-i", &bad_json, "-o", &p(&dir, "m.json")]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("coeffs[1]"));

    let bad_bin = p(&dir, "bad.bin");
    let mut bytes = kernel_to_binary(&ToeplitzKernel::new(vec![1.0; 4]).unwrap()).unwrap();
    bytes.truncate(20);
    std::fs::write(&bad_bin, bytes).unwrap();
    let o = etsc(&["convert", "-i", &bad_bin, "-o", &p(&dir, "m.json")]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte offset 13"));
}

#[test]
fn parity_random_and_identity() {
    let o = etsc(&["parity", "--L", "2", "--d", "4", "--n", "256"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(metric(&stdout(&o), "max_in_range") < 1e-5);

    let o = etsc(&["parity", "--identity", "--layers", "2", "--d", "3", "--n", "32"]);
    assert!(o.status.success());
    let s = stdout(&o);
    // Delta kernels pass inputs through; what remains is FFT / root-of-unity round-off.
    assert!(metric(&s, "max_in_range") < 1e-13, "{s}");
}

#[test]
fn parity_beyond_n_is_flagged() {
    let o = etsc(&["parity", "--L", "1", "--d", "2", "--n", "64", "--positions", "160"]);
    assert!(o.status.success());
    let s = stdout(&o);
    let line = s.lines().find(|l| l.starts_with("pair=origin-ssm")).unwrap();
    assert!(line.contains("beyond_expected=true"));
    assert!(metric(line, "beyond") > 1e-3);
}

#[test]
fn bench_writes_expected_rows() {
    let dir = TempDir::new().unwrap();
    let csv = p(&dir, "b.csv");
    let args = [
        "bench", "--grid-n", "64,256,1024", "--d", "4", "--L", "2", "--repeats", "3", "--warmup", "0",
        "--positions", "8,40", "-o", &csv,
    ];
    let o = etsc(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    assert!(rows.len() >= 9);
    let ssm: Vec<_> = rows.iter().filter(|r| r.strategy == "ssm" && r.n == 256).collect();
    assert!(ssm.windows(2).all(|w| w[0].resident_scalars == w[1].resident_scalars));

    let csv2 = p(&dir, "b2.csv");
    let mut args2 = args;
    args2[args2.len() - 1] = &csv2;
    assert!(etsc(&args2).status.success());
    let rows2 = read_csv(std::fs::File::open(&csv2).unwrap()).unwrap();
    let strip = |r: &etsc_core::bench::BenchRecord| {
        let mut r = r.clone();
        r.seconds_per_token = None;
        r.conversion_seconds = None;
        r
    };
    assert_eq!(rows.iter().map(strip).collect::<Vec<_>>(), rows2.iter().map(strip).collect::<Vec<_>>());
}

#[test]
fn bench_conversion_kind() {
    let dir = TempDir::new().unwrap();
    let csv = p(&dir, "c.csv");
    let o = etsc(&[
        "bench", "--kind", "conversion", "--grid-n", "32,64", "--d", "2", "--repeats", "3", "--grad-iters",
        "20", "-o", &csv,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.conversion_seconds.is_some() && r.relative_error.is_some()));
}

#[test]
fn bench_usage_errors() {
    let dir = TempDir::new().unwrap();
    let o = etsc(&["bench", "--repeats", "2", "-o", &p(&dir, "x.csv")]);
    assert_eq!(o.status.code(), Some(2));
    let o = etsc(&["bench", "--strategies", "fast", "-o", &p(&dir, "x.csv")]);
    assert_eq!(o.status.code(), Some(2));
    let o = etsc(&["bench", "--grid-n", "16", "--d", "1", "--repeats", "3", "-o", "/nonexistent-dir/x.csv"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn thread_override_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_etsc"))
        .args(["parity", "--n", "8", "--d", "1"])
        .env("ETSC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_etsc"))
        .args(["parity", "--n", "8", "--d", "1"])
        .env("ETSC_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success());
}
