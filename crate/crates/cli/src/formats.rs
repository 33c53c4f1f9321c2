//! Kernel and modes files, JSON and little-endian binary.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! kernel: "ETSC" u32 version=1, u8 kind=0, u32 n, n x f64 coeffs
//! modes:  "ETSC" u32 version=1, u8 kind=1, u32 h, f64 gamma,
//!         u32 origin_length, h x (f64 re, f64 im) lambda, h x (f64 re, f64 im) b
//! ```
//!
//! The binary kernel layout has no field for the extension policy, so only
//! zero-extended kernels can be written in it.

use std::fs;
use std::path::Path;

use etsc_core::{Complex64, Extension, SsmModes, ToeplitzKernel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"ETSC";
pub const VERSION: u32 = 1;
const KIND_KERNEL: u8 = 0;
const KIND_MODES: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Json,
    Binary,
}

impl Encoding {
    /// `.bin` selects binary, anything else JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Encoding::Binary,
            _ => Encoding::Json,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtensionJson {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelJson {
    format: String,
    version: u32,
    n: usize,
    extension: ExtensionJson,
    coeffs: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModesJson {
    format: String,
    version: u32,
    h: usize,
    gamma: f64,
    origin_length: usize,
    lambda: Vec<[f64; 2]>,
    b: Vec<[f64; 2]>,
}

fn json_err(path: &Path, json_path: &str, reason: impl Into<String>) -> CliError {
    CliError::JsonParse { path: path.to_path_buf(), json_path: json_path.to_string(), reason: reason.into() }
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let p = e.path().to_string();
        json_err(path, &p, e.into_inner().to_string())
    })
}

// ---- kernels ----

pub fn kernel_to_json(k: &ToeplitzKernel) -> String {
    let extension = match k.extension() {
        Extension::Zeros => ExtensionJson { kind: "zeros".into(), gamma: None },
        Extension::Decay(g) => ExtensionJson { kind: "decay".into(), gamma: Some(g) },
    };
    let doc = KernelJson {
        format: "etsc-kernel".into(),
        version: VERSION,
        n: k.len(),
        extension,
        coeffs: k.coeffs().to_vec(),
    };
    serde_json::to_string_pretty(&doc).expect("kernel serializes")
}

pub fn kernel_from_json(path: &Path, bytes: &[u8]) -> Result<ToeplitzKernel> {
    let doc: KernelJson = parse_json(path, bytes)?;
    if doc.format != "etsc-kernel" {
        return Err(json_err(path, "format", format!("expected \"etsc-kernel\", got {:?}", doc.format)));
    }
    if doc.version != VERSION {
        return Err(json_err(path, "version", format!("unsupported version {}", doc.version)));
    }
    if doc.coeffs.len() != doc.n {
        return Err(json_err(path, "coeffs", format!("length {} does not match n = {}", doc.coeffs.len(), doc.n)));
    }
    let extension = match (doc.extension.kind.as_str(), doc.extension.gamma) {
        ("zeros", _) => Extension::Zeros,
        ("decay", Some(g)) => Extension::Decay(g),
        ("decay", None) => return Err(json_err(path, "extension.gamma", "decay extension needs gamma")),
        (other, _) => return Err(json_err(path, "extension.kind", format!("unknown kind {other:?}"))),
    };
    ToeplitzKernel::with_extension(doc.coeffs, extension)
        .map_err(|e| json_err(path, "coeffs", e.to_string()))
}

pub fn kernel_to_binary(k: &ToeplitzKernel) -> Result<Vec<u8>> {
    if k.extension() != Extension::Zeros {
        return Err(CliError::Usage(
            "the binary kernel format only stores zero-extended kernels; use JSON".into(),
        ));
    }
    let n = u32::try_from(k.len()).map_err(|_| CliError::Usage("kernel too long for binary format".into()))?;
    let mut out = Vec::with_capacity(13 + 8 * k.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(KIND_KERNEL);
    out.extend_from_slice(&n.to_le_bytes());
    for c in k.coeffs() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    Ok(out)
}

/// Bounds-checked little-endian reader that reports byte offsets.
struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    fn fail(&self, offset: usize, reason: impl Into<String>) -> CliError {
        CliError::BinaryParse { path: self.path.to_path_buf(), offset, reason: reason.into() }
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(self.pos, format!("truncated while reading {what}"))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn header(&mut self, kind: u8) -> Result<()> {
        if self.take(4, "magic")? != MAGIC {
            return Err(self.fail(0, "bad magic, expected \"ETSC\""));
        }
        let at = self.pos;
        let version = self.u32("version")?;
        if version != VERSION {
            return Err(self.fail(at, format!("unsupported version {version}")));
        }
        let at = self.pos;
        let k = self.u8("kind")?;
        if k != kind {
            return Err(self.fail(at, format!("expected kind {kind}, got {k}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(self.pos, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }

    /// Fails before allocating when the declared count cannot fit.
    fn expect_remaining(&self, count: usize, each: usize, what: &str) -> Result<()> {
        let need = count.checked_mul(each);
        if need.is_none_or(|need| need > self.bytes.len() - self.pos) {
            return Err(self.fail(self.pos, format!("declared {count} {what} exceed file size")));
        }
        Ok(())
    }
}

pub fn kernel_from_binary(path: &Path, bytes: &[u8]) -> Result<ToeplitzKernel> {
    let mut r = Reader::new(path, bytes);
    r.header(KIND_KERNEL)?;
    let n = r.u32("n")? as usize;
    r.expect_remaining(n, 8, "coefficients")?;
    let coeffs = (0..n).map(|_| r.f64("coefficient")).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    ToeplitzKernel::new(coeffs).map_err(|e| r.fail(13, e.to_string()))
}

fn is_binary(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}

pub fn read_kernel(path: &Path) -> Result<ToeplitzKernel> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if is_binary(&bytes) {
        kernel_from_binary(path, &bytes)
    } else {
        kernel_from_json(path, &bytes)
    }
}

pub fn write_kernel(path: &Path, k: &ToeplitzKernel, enc: Encoding) -> Result<()> {
    let bytes = match enc {
        Encoding::Json => kernel_to_json(k).into_bytes(),
        Encoding::Binary => kernel_to_binary(k)?,
    };
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

// ---- modes ----

fn pairs(v: &[Complex64]) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

pub fn modes_to_json(m: &SsmModes) -> String {
    let doc = ModesJson {
        format: "etsc-modes".into(),
        version: VERSION,
        h: m.hidden_size(),
        gamma: m.gamma(),
        origin_length: m.origin_length(),
        lambda: pairs(m.lambda()),
        b: pairs(m.weights()),
    };
    serde_json::to_string_pretty(&doc).expect("modes serialize")
}

pub fn modes_from_json(path: &Path, bytes: &[u8]) -> Result<SsmModes> {
    let doc: ModesJson = parse_json(path, bytes)?;
    if doc.format != "etsc-modes" {
        return Err(json_err(path, "format", format!("expected \"etsc-modes\", got {:?}", doc.format)));
    }
    if doc.version != VERSION {
        return Err(json_err(path, "version", format!("unsupported version {}", doc.version)));
    }
    if doc.lambda.len() != doc.h {
        return Err(json_err(path, "lambda", format!("length {} does not match h = {}", doc.lambda.len(), doc.h)));
    }
    if doc.b.len() != doc.h {
        return Err(json_err(path, "b", format!("length {} does not match h = {}", doc.b.len(), doc.h)));
    }
    let c = |v: Vec<[f64; 2]>| v.into_iter().map(|[re, im]| Complex64::new(re, im)).collect();
    SsmModes::new(c(doc.lambda), c(doc.b), doc.gamma, doc.origin_length)
        .map_err(|e| json_err(path, "", e.to_string()))
}

pub fn modes_to_binary(m: &SsmModes) -> Result<Vec<u8>> {
    let h = u32::try_from(m.hidden_size()).map_err(|_| CliError::Usage("too many modes for binary format".into()))?;
    let origin = u32::try_from(m.origin_length())
        .map_err(|_| CliError::Usage("origin length too large for binary format".into()))?;
    let mut out = Vec::with_capacity(25 + 32 * m.hidden_size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(KIND_MODES);
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&m.gamma().to_le_bytes());
    out.extend_from_slice(&origin.to_le_bytes());
    for z in m.lambda().iter().chain(m.weights()) {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    Ok(out)
}

pub fn modes_from_binary(path: &Path, bytes: &[u8]) -> Result<SsmModes> {
    let mut r = Reader::new(path, bytes);
    r.header(KIND_MODES)?;
    let h = r.u32("h")? as usize;
    let gamma = r.f64("gamma")?;
    let origin = r.u32("origin_length")? as usize;
    r.expect_remaining(h, 32, "modes")?;
    let mut read = |what: &str| -> Result<Vec<Complex64>> {
        (0..h)
            .map(|_| Ok(Complex64::new(r.f64(what)?, r.f64(what)?)))
            .collect()
    };
    let lambda = read("lambda")?;
    let weights = read("b")?;
    r.finish()?;
    SsmModes::new(lambda, weights, gamma, origin).map_err(|e| r.fail(9, e.to_string()))
}

pub fn read_modes(path: &Path) -> Result<SsmModes> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if is_binary(&bytes) {
        modes_from_binary(path, &bytes)
    } else {
        modes_from_json(path, &bytes)
    }
}

pub fn write_modes(path: &Path, m: &SsmModes, enc: Encoding) -> Result<()> {
    let bytes = match enc {
        Encoding::Json => modes_to_json(m).into_bytes(),
        Encoding::Binary => modes_to_binary(m)?,
    };
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
