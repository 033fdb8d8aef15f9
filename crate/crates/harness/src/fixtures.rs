//! Golden fixtures: seeded cases, a text file format and the
//! generate/verify workflow.
//!
//! A fixture file holds every output tensor of one case in full (17
//! significant digits) plus a 64-bit digest of the canonical byte encoding
//! of those outputs. A tolerance of zero means the recomputed digest must
//! match; otherwise values are compared elementwise.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use sha2::{Digest, Sha256};

use mmfuse_core::adapter::{adapter_forward, AdapterConfig, AdapterWeights};
use mmfuse_core::encoder::{
    cei_forward, mpf_forward, CeiConfig, CeiWeights, ModalityPair, MpfConfig, MpfWeights,
};
use mmfuse_core::init::Init;
use mmfuse_core::pipeline::{EncoderConfig, EncoderWeights};
use mmfuse_core::scan::{ss1d_scan, ScanInputs};
use mmfuse_core::store::Params;
use mmfuse_core::Tensor;

use crate::synth::synth_pair;

pub const EXTENSION: &str = "fixture";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const EXACT: Tolerance = Tolerance { abs: 0.0, rel: 0.0 };

    pub fn is_exact(&self) -> bool {
        self.abs == 0.0 && self.rel == 0.0
    }
}

pub type Outputs = Vec<(String, Tensor)>;

/// Input shapes and named outputs of one fixture computation.
pub type Computed = anyhow::Result<(Vec<Vec<usize>>, Outputs)>;

pub struct FixtureCase {
    pub name: &'static str,
    pub seed: u64,
    pub tolerance: Tolerance,
    pub compute: fn(u64) -> Computed,
}

impl FixtureCase {
    pub fn run(&self) -> anyhow::Result<(Vec<Vec<usize>>, Outputs)> {
        (self.compute)(self.seed)
    }

    pub fn path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.{EXTENSION}", self.name))
    }
}

pub fn ss1d_case(seed: u64) -> ScanInputs {
    let (l, d, n) = (16, 4, 8);
    let mut init = Init::new(seed);
    let u = init.uniform(&[1, l, d], 1.0);
    let delta = init.uniform(&[1, l, d], 0.4).map(|v| v + 0.5);
    let a = init.uniform(&[d, n], 1.0).map(|v| -(v.abs() + 0.05));
    let b = init.uniform(&[1, l, n], 1.0);
    let c = init.uniform(&[1, l, n], 1.0);
    ScanInputs::new(u, delta, a, b, c).expect("fixture scan shapes")
}

/// Frozen random weights, input of ones, `B = 1, C = 8, 16 x 16`.
pub fn cei_case(seed: u64) -> (CeiWeights, ModalityPair) {
    let w = CeiWeights::init(&CeiConfig::new(8), &mut Init::new(seed)).expect("cei config");
    let ones = Tensor::full(&[1, 8, 16, 16], 1.0);
    (w, ModalityPair::new(ones.clone(), ones, 3).expect("pair"))
}

/// Random expert outputs, `C = 16, 16 x 16`, default bottleneck and cutoff.
pub fn adapter_case(seed: u64) -> (AdapterWeights, Tensor) {
    let w = AdapterWeights::init_active(&AdapterConfig::new(16), &mut Init::new(seed))
        .expect("adapter config");
    (w, Init::new(seed + 1).uniform(&[1, 16, 16, 16], 1.0))
}

pub const MPF_CHANNELS: [usize; 3] = [8, 12, 16];

/// `d = 32`, level extents of a 64 x 64 input (8, 4, 2).
pub fn mpf_case(seed: u64) -> (MpfWeights, Vec<ModalityPair>) {
    let w = MpfWeights::init(&MpfConfig::new(MPF_CHANNELS, 32), &mut Init::new(seed))
        .expect("mpf config");
    let mut init = Init::new(seed + 1);
    let levels = (0..3)
        .map(|i| {
            let e = 8 >> i;
            let shape = [1, MPF_CHANNELS[i], e, e];
            ModalityPair::new(init.uniform(&shape, 1.0), init.uniform(&shape, 1.0), 3 + i)
                .expect("pair")
        })
        .collect();
    (w, levels)
}

/// Small encoder on a 64 x 64 synthetic pair.
pub fn encoder_case(seed: u64) -> (EncoderWeights, Tensor, Tensor) {
    let w = EncoderWeights::init(&EncoderConfig::small(), seed).expect("encoder config");
    let (rgb, ir) = synth_pair(seed, 64).expect("64 is a valid size");
    (w, rgb, ir)
}

fn shapes(ts: &[&Tensor]) -> Vec<Vec<usize>> {
    ts.iter().map(|t| t.shape().to_vec()).collect()
}

pub fn cases() -> Vec<FixtureCase> {
    vec![
        FixtureCase {
            name: "ss1d_scan",
            seed: 11,
            tolerance: Tolerance::EXACT,
            compute: |seed| {
                let s = ss1d_case(seed);
                let y = ss1d_scan(&s)?;
                Ok((shapes(&[&s.u, &s.delta, &s.a, &s.b, &s.c]), vec![("y".into(), y)]))
            },
        },
        FixtureCase {
            name: "cei_forward",
            seed: 21,
            tolerance: Tolerance::EXACT,
            compute: |seed| {
                let (w, p) = cei_case(seed);
                let out = cei_forward(&p, &w)?;
                Ok((
                    shapes(&[&p.rgb, &p.ir]),
                    vec![("rgb".into(), out.rgb), ("ir".into(), out.ir)],
                ))
            },
        },
        FixtureCase {
            name: "adapter_forward",
            seed: 31,
            tolerance: Tolerance::EXACT,
            compute: |seed| {
                let (w, x) = adapter_case(seed);
                let y = adapter_forward(&x, &w)?;
                Ok((shapes(&[&x]), vec![("f".into(), y)]))
            },
        },
        FixtureCase {
            name: "mpf_forward",
            seed: 41,
            tolerance: Tolerance::EXACT,
            compute: |seed| {
                let (w, levels) = mpf_case(seed);
                let out = mpf_forward(&levels, &w)?;
                let ins: Vec<&Tensor> = levels.iter().flat_map(|p| [&p.rgb, &p.ir]).collect();
                Ok((
                    shapes(&ins),
                    vec![("p3".into(), out.p3), ("n4".into(), out.n4), ("n5".into(), out.n5)],
                ))
            },
        },
        FixtureCase {
            name: "encoder_forward",
            seed: 51,
            tolerance: Tolerance::EXACT,
            compute: |seed| {
                let (w, rgb, ir) = encoder_case(seed);
                let out = mmfuse_core::pipeline::encoder_forward(&rgb, &ir, &w.to_store())?;
                Ok((
                    shapes(&[&rgb, &ir]),
                    vec![("p3".into(), out.p3), ("n4".into(), out.n4), ("n5".into(), out.n5)],
                ))
            },
        },
    ]
}

/// First 8 bytes of SHA-256 over the canonical encoding, as a big-endian
/// integer. Each output contributes `u16 name_len | name | u8 rank |
/// rank x u32 extent | f64 values`, little-endian.
pub fn digest(outputs: &[(String, Tensor)]) -> u64 {
    let mut h = Sha256::new();
    for (name, t) in outputs {
        h.update((name.len() as u16).to_le_bytes());
        h.update(name.as_bytes());
        h.update([t.rank() as u8]);
        for &e in t.shape() {
            h.update((e as u32).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    let bytes = h.finalize();
    u64::from_be_bytes(bytes[..8].try_into().unwrap())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixtureFile {
    pub name: String,
    pub seed: u64,
    pub tolerance: Tolerance,
    pub inputs: Vec<Vec<usize>>,
    pub digest: u64,
    pub outputs: Outputs,
}

fn fmt_shape(s: &[usize]) -> String {
    if s.is_empty() {
        "scalar".into()
    } else {
        s.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("x")
    }
}

fn parse_shape(s: &str) -> anyhow::Result<Vec<usize>> {
    if s == "scalar" {
        return Ok(vec![]);
    }
    s.split('x')
        .map(|e| e.parse::<usize>().with_context(|| format!("bad extent {e:?}")))
        .collect()
}

impl FixtureFile {
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "mmfuse-fixture 1").unwrap();
        writeln!(out, "name {}", self.name).unwrap();
        writeln!(out, "seed {}", self.seed).unwrap();
        writeln!(out, "tolerance {:e} {:e}", self.tolerance.abs, self.tolerance.rel).unwrap();
        let ins: Vec<String> = self.inputs.iter().map(|s| fmt_shape(s)).collect();
        writeln!(out, "inputs {}", ins.join(" ")).unwrap();
        writeln!(out, "digest {:016x}", self.digest).unwrap();
        for (name, t) in &self.outputs {
            writeln!(out, "tensor {name} {}", fmt_shape(t.shape())).unwrap();
            for row in t.data().chunks(4) {
                let vals: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
                writeln!(out, "{}", vals.join(" ")).unwrap();
            }
        }
        writeln!(out, "end").unwrap();
        out
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        let mut field = |key: &str| -> anyhow::Result<String> {
            let (i, line) = lines.next().ok_or_else(|| anyhow!("missing {key:?} line"))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| anyhow!("line {}: expected {key:?}, found {line:?}", i + 1))
        };
        if field("mmfuse-fixture")? != "1" {
            bail!("unsupported fixture version");
        }
        let name = field("name")?;
        let seed = field("seed")?.parse().context("bad seed")?;
        let tol = field("tolerance")?;
        let tv: Vec<f64> = tol
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .context("bad tolerance")?;
        if tv.len() != 2 {
            bail!("tolerance needs absolute and relative parts");
        }
        let inputs = field("inputs")?
            .split_whitespace()
            .map(parse_shape)
            .collect::<anyhow::Result<_>>()?;
        let digest = u64::from_str_radix(&field("digest")?, 16).context("bad digest")?;

        let mut outputs = Vec::new();
        loop {
            let (i, line) = lines.next().ok_or_else(|| anyhow!("missing \"end\""))?;
            if line == "end" {
                break;
            }
            let rest = line
                .strip_prefix("tensor ")
                .ok_or_else(|| anyhow!("line {}: expected \"tensor\" or \"end\"", i + 1))?;
            let (tname, shape) = rest
                .split_once(' ')
                .ok_or_else(|| anyhow!("line {}: tensor header needs a name and a shape", i + 1))?;
            let shape = parse_shape(shape)?;
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            while data.len() < n {
                let (j, row) = lines
                    .next()
                    .ok_or_else(|| anyhow!("tensor {tname}: {} of {n} values", data.len()))?;
                for v in row.split_whitespace() {
                    data.push(v.parse::<f64>().with_context(|| format!("line {}: bad value {v:?}", j + 1))?);
                }
            }
            if data.len() != n {
                bail!("tensor {tname}: {} values for shape {shape:?}", data.len());
            }
            outputs.push((tname.to_string(), Tensor::new(shape, data)?));
        }
        Ok(Self {
            name,
            seed,
            tolerance: Tolerance { abs: tv[0], rel: tv[1] },
            inputs,
            digest,
            outputs,
        })
    }
}

pub fn build(case: &FixtureCase) -> anyhow::Result<FixtureFile> {
    let (inputs, outputs) = case.run()?;
    Ok(FixtureFile {
        name: case.name.to_string(),
        seed: case.seed,
        tolerance: case.tolerance,
        inputs,
        digest: digest(&outputs),
        outputs,
    })
}

pub fn generate(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    cases()
        .iter()
        .map(|case| {
            let path = case.path(dir);
            fs::write(&path, build(case)?.render())
                .with_context(|| format!("writing {}", path.display()))?;
            Ok(path)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum CaseStatus {
    Pass { exact: bool, max_abs: f64 },
    Missing,
    Malformed(String),
    /// Stored values no longer hash to the stored digest.
    Corrupt { stored: u64, actual: u64 },
    DigestMismatch { stored: u64, recomputed: u64 },
    ToleranceExceeded { tensor: String, max_abs: f64, allowed: f64 },
    ComputeFailed(String),
}

impl CaseStatus {
    pub fn passed(&self) -> bool {
        matches!(self, CaseStatus::Pass { .. })
    }

    pub fn describe(&self) -> String {
        match self {
            CaseStatus::Pass { exact: true, .. } => "bit-exact".into(),
            CaseStatus::Pass { max_abs, .. } => format!("within tolerance, max |diff| {max_abs:e}"),
            CaseStatus::Missing => "fixture file missing".into(),
            CaseStatus::Malformed(e) => format!("malformed fixture: {e}"),
            CaseStatus::Corrupt { stored, actual } => {
                format!("stored values hash to {actual:016x}, header says {stored:016x}")
            }
            CaseStatus::DigestMismatch { stored, recomputed } => {
                format!("digest mismatch: stored {stored:016x}, recomputed {recomputed:016x}")
            }
            CaseStatus::ToleranceExceeded { tensor, max_abs, allowed } => {
                format!("{tensor}: max |diff| {max_abs:e} exceeds {allowed:e}")
            }
            CaseStatus::ComputeFailed(e) => format!("recomputation failed: {e}"),
        }
    }
}

pub fn verify_case(case: &FixtureCase, dir: &Path) -> CaseStatus {
    let path = case.path(dir);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return CaseStatus::Missing,
        Err(e) => return CaseStatus::Malformed(e.to_string()),
    };
    let stored = match FixtureFile::parse(&text) {
        Ok(f) => f,
        Err(e) => return CaseStatus::Malformed(format!("{e:#}")),
    };
    let actual = digest(&stored.outputs);
    if actual != stored.digest {
        return CaseStatus::Corrupt { stored: stored.digest, actual };
    }
    let fresh = match build(case) {
        Ok(f) => f,
        Err(e) => return CaseStatus::ComputeFailed(format!("{e:#}")),
    };
    if stored.tolerance.is_exact() {
        return if fresh.digest == stored.digest {
            CaseStatus::Pass { exact: true, max_abs: 0.0 }
        } else {
            CaseStatus::DigestMismatch { stored: stored.digest, recomputed: fresh.digest }
        };
    }
    let mut worst: f64 = 0.0;
    for ((name, want), (_, got)) in stored.outputs.iter().zip(&fresh.outputs) {
        if want.shape() != got.shape() {
            return CaseStatus::Malformed(format!("{name}: shape {:?} vs {:?}", want.shape(), got.shape()));
        }
        for (w, g) in want.data().iter().zip(got.data()) {
            let diff = (w - g).abs();
            let allowed = stored.tolerance.abs + stored.tolerance.rel * w.abs();
            if diff.is_nan() || diff > allowed {
                return CaseStatus::ToleranceExceeded { tensor: name.clone(), max_abs: diff, allowed };
            }
            worst = worst.max(diff);
        }
    }
    CaseStatus::Pass { exact: fresh.digest == stored.digest, max_abs: worst }
}

pub fn verify(dir: &Path) -> Vec<(&'static str, CaseStatus)> {
    cases().iter().map(|c| (c.name, verify_case(c, dir))).collect()
}
