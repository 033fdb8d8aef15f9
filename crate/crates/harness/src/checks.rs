//! Named invariant checks run by `mmfuse check`.

use anyhow::{ensure, Result};

use mmfuse_core::adapter::{
    adapter_forward, centered_spectrum, frequency_bands, frequency_split, low_frequency_mask,
    router_fuse, AdapterConfig, AdapterWeights,
};
use mmfuse_core::conv::{conv2d, ConvWeights};
use mmfuse_core::encoder::{
    attention_weights, cei_forward, cei_gates, completion_branch, deep_attention, fuse_project,
    mpf_forward, AttentionConfig, AttentionWeights, CeiConfig, CeiWeights, CompletionWeights,
    ModalityPair, MpfConfig, MpfWeights,
};
use mmfuse_core::init::{zero_conv, Init};
use mmfuse_core::norm::{normalize, Affine, NormKind};
use mmfuse_core::pipeline::{EncoderConfig, EncoderWeights};
use mmfuse_core::scan::{
    dense_ss2d_param_count, fold_direction, region_aware_ss2d, ss1d_backward, ss1d_scan, ss2d,
    unfold_direction, Direction, DirectionalScan, RegionSs2dConfig, RegionSs2dWeights, ScanGrads,
    ScanInputs,
};
use mmfuse_core::store::{Params, WeightStore};
use mmfuse_core::{Tensor, ADAPTER_DIM, CHANNEL_GROUPS, DEFAULT_RHO, LOW_RANK, NORM_EPS};

use crate::format;
use crate::synth::{modality_correlation, synth_pair};

/// Finite-difference step used by the gradient check.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative gradient error.
pub const GRAD_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Outcome {
    /// Passes when `measured <= tolerance`.
    pub fn at_most(measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail: detail.into(),
        }
    }

    pub fn exact(diff: f64, detail: impl Into<String>) -> Self {
        Self::at_most(diff, 0.0, detail)
    }

    pub fn holds(cond: bool, detail: impl Into<String>) -> Self {
        Self {
            passed: cond,
            measured: if cond { 0.0 } else { 1.0 },
            tolerance: 0.0,
            detail: detail.into(),
        }
    }
}

pub struct Check {
    pub name: &'static str,
    pub run: fn() -> Result<Outcome>,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub name: &'static str,
    pub outcome: Outcome,
}

#[derive(Debug, thiserror::Error)]
#[error("no check matches filter {0:?}")]
pub struct UnknownFilter(pub String);

pub fn select(filter: Option<&str>) -> Result<Vec<Check>, UnknownFilter> {
    let all = registry();
    let Some(pat) = filter else { return Ok(all) };
    let chosen: Vec<Check> = all.into_iter().filter(|c| c.name.contains(pat)).collect();
    if chosen.is_empty() {
        Err(UnknownFilter(pat.to_string()))
    } else {
        Ok(chosen)
    }
}

pub fn run_check(c: &Check) -> Report {
    let outcome = match (c.run)() {
        Ok(o) => o,
        Err(e) => Outcome {
            passed: false,
            measured: f64::NAN,
            tolerance: f64::NAN,
            detail: format!("error: {e:#}"),
        },
    };
    Report { name: c.name, outcome }
}

pub fn run_suite(filter: Option<&str>) -> Result<Vec<Report>, UnknownFilter> {
    Ok(select(filter)?.iter().map(run_check).collect())
}

// ---------------------------------------------------------------- gradient

#[derive(Clone, Debug)]
pub struct GradReport {
    pub instances: usize,
    pub max_rel: f64,
    pub worst: String,
}

/// `|fd - an| / max(|an|, |fd|, 1)`.
pub fn relative_error(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / an.abs().max(fd.abs()).max(1.0)
}

pub fn grad_instance(seed: u64) -> (ScanInputs, Tensor) {
    let (l, d, n) = (6, 2, 3);
    let mut init = Init::new(seed);
    let u = init.uniform(&[1, l, d], 1.0);
    let delta = init.uniform(&[1, l, d], 0.5).map(|v| v + 0.7);
    let a = init.uniform(&[d, n], 0.7).map(|v| v - 0.8);
    let b = init.uniform(&[1, l, n], 1.0);
    let c = init.uniform(&[1, l, n], 1.0);
    let dy = init.uniform(&[1, l, d], 1.0);
    (ScanInputs::new(u, delta, a, b, c).expect("gradcheck shapes"), dy)
}

fn field_mut(s: &mut ScanInputs, f: usize) -> &mut Tensor {
    match f {
        0 => &mut s.u,
        1 => &mut s.delta,
        2 => &mut s.a,
        3 => &mut s.b,
        _ => &mut s.c,
    }
}

fn grad_field(g: &ScanGrads, f: usize) -> &Tensor {
    match f {
        0 => &g.u,
        1 => &g.delta,
        2 => &g.a,
        3 => &g.b,
        _ => &g.c,
    }
}

const FIELDS: [&str; 5] = ["u", "delta", "a", "b", "c"];

/// Central differences of `sum(scan(x) * dy)` against `backward` for every
/// input element of `instances` random problems.
pub fn gradcheck_with<F>(instances: usize, seed: u64, backward: F) -> Result<GradReport>
where
    F: Fn(&ScanInputs, &Tensor) -> mmfuse_core::Result<ScanGrads>,
{
    let mut report = GradReport { instances, max_rel: 0.0, worst: String::new() };
    for k in 0..instances {
        let (s, dy) = grad_instance(seed + k as u64);
        let grads = backward(&s, &dy)?;
        let loss = |p: &ScanInputs| -> Result<f64> {
            let y = ss1d_scan(p)?;
            Ok(y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum())
        };
        for (f, field) in FIELDS.iter().enumerate() {
            let len = grad_field(&grads, f).len();
            for i in 0..len {
                let mut plus = s.clone();
                let mut minus = s.clone();
                let bump = |t: &mut Tensor, h: f64| {
                    let mut v = t.clone().into_data();
                    v[i] += h;
                    *t = Tensor::new(t.shape().to_vec(), v).unwrap();
                };
                bump(field_mut(&mut plus, f), FD_STEP);
                bump(field_mut(&mut minus, f), -FD_STEP);
                let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * FD_STEP);
                let an = grad_field(&grads, f).data()[i];
                let rel = relative_error(fd, an);
                if rel > report.max_rel || report.worst.is_empty() {
                    report.max_rel = rel.max(report.max_rel);
                    report.worst = format!("instance {k}, d{field}[{i}]: fd {fd:.3e} vs {an:.3e}");
                }
            }
        }
    }
    Ok(report)
}

pub fn gradcheck(instances: usize, seed: u64) -> Result<GradReport> {
    gradcheck_with(instances, seed, ss1d_backward)
}

fn check_gradient() -> Result<Outcome> {
    let r = gradcheck(10, 1000)?;
    Ok(Outcome::at_most(r.max_rel, GRAD_TOL, format!("{} instances, worst {}", r.instances, r.worst)))
}

// ---------------------------------------------------------------- scans

fn scalar_scan(u: &[f64], a: f64, dt: f64, b: f64, c: f64) -> ScanInputs {
    let l = u.len();
    ScanInputs::new(
        Tensor::new(vec![1, l, 1], u.to_vec()).unwrap(),
        Tensor::full(&[1, l, 1], dt),
        Tensor::full(&[1, 1], a),
        Tensor::full(&[1, l, 1], b),
        Tensor::full(&[1, l, 1], c),
    )
    .unwrap()
}

fn check_prefix_sum() -> Result<Outcome> {
    let y = ss1d_scan(&scalar_scan(&[1.0, 2.0, 3.0], 0.0, 1.0, 1.0, 1.0))?;
    let single = ss1d_scan(&scalar_scan(&[3.0], -1.0, 2.0, 1.0, 2.0))?;
    let diff = (y.data()[0] - 1.0).abs() + (y.data()[1] - 3.0).abs() + (y.data()[2] - 6.0).abs()
        + (single.data()[0] - 12.0).abs();
    Ok(Outcome::exact(diff, "A=0 gives [1,3,6]; one step gives 12"))
}

fn check_causality() -> Result<Outcome> {
    let (s, _) = grad_instance(7);
    let y = ss1d_scan(&s)?;
    let mut u = s.u.clone().into_data();
    for v in &mut u[6..] {
        *v += 1.0;
    }
    let y2 = ss1d_scan(&ScanInputs { u: Tensor::new(s.u.shape().to_vec(), u)?, ..s })?;
    let diff = y.data()[..6].iter().zip(&y2.data()[..6]).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(Outcome::exact(diff, "outputs before the perturbed step are unchanged"))
}

fn check_linearity() -> Result<Outcome> {
    let (s, _) = grad_instance(8);
    let y = ss1d_scan(&s)?;
    let y3 = ss1d_scan(&ScanInputs { u: s.u.scale(-3.0), ..s })?;
    Ok(Outcome::at_most(y3.max_abs_diff(&y.scale(-3.0)), 1e-12, "scan(-3u) = -3 scan(u)"))
}

fn check_rejects_step() -> Result<Outcome> {
    let mut s = scalar_scan(&[1.0, 2.0], -1.0, 1.0, 1.0, 1.0);
    s.delta = Tensor::new(vec![1, 2, 1], vec![1.0, 0.0])?;
    Ok(Outcome::holds(ss1d_scan(&s).is_err(), "zero step size rejected"))
}

fn check_fold_unfold() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for (h, w) in [(3, 5), (8, 8)] {
        let x = Init::new(h as u64).uniform(&[2, 3, h, w], 1.0);
        for d in Direction::ALL {
            let back = fold_direction(&unfold_direction(&x, d)?, d, h, w)?;
            worst = worst.max(back.max_abs_diff(&x));
            ensure!(back == x, "{} on {h}x{w} not bit-exact", d.name());
        }
    }
    Ok(Outcome::exact(worst, "all four directions on 3x5 and 8x8"))
}

fn check_transpose_symmetry() -> Result<Outcome> {
    let (c, n, h, w) = (2, 3, 4, 6);
    let mut init = Init::new(5);
    let x = init.uniform(&[1, c, h, w], 1.0);
    let delta = init.uniform(&[1, c, h, w], 0.3).map(|v| v + 0.5);
    let a = init.uniform(&[c, n], 0.5).map(|v| v - 0.7);
    let b = init.uniform(&[1, n, h, w], 1.0);
    let cm = init.uniform(&[1, n, h, w], 1.0);
    let tr = |t: &Tensor| {
        let (bb, cc, hh, ww) = t.dims4().unwrap();
        Tensor::from_fn(&[bb, cc, ww, hh], |i| {
            let (p, r) = (i / (hh * ww), i % (hh * ww));
            let (y, xx) = (r / hh, r % hh);
            t.data()[p * hh * ww + xx * ww + y]
        })
    };
    let scan = |dir, x: &Tensor, d: &Tensor, b: &Tensor, cm: &Tensor| {
        ss2d(x, &[DirectionalScan { direction: dir, delta: d, a: &a, b, c: cm }])
    };
    let yh = scan(Direction::HFwd, &x, &delta, &b, &cm)?;
    let yv = scan(Direction::VFwd, &tr(&x), &tr(&delta), &tr(&b), &tr(&cm))?;
    Ok(Outcome::exact(tr(&yv).max_abs_diff(&yh), "row scan of X equals column scan of X^T"))
}

fn check_driving_params() -> Result<Outcome> {
    let w = RegionSs2dWeights::init(&RegionSs2dConfig::new(256), &mut Init::new(0))?;
    let got = w.driving_projection_params();
    let dense = 256 * 256;
    Ok(Outcome::holds(got == 2048 && dense == 65_536, format!("driving pair {got} vs dense {dense}")))
}

fn check_param_ratio() -> Result<Outcome> {
    let cfg = RegionSs2dConfig::new(256);
    let w = RegionSs2dWeights::init(&cfg, &mut Init::new(0))?;
    let (total, dense) = (w.param_count(), dense_ss2d_param_count(&cfg));
    Ok(Outcome::at_most(total as f64 / dense as f64, 0.25, format!("{total} / {dense} parameters")))
}

fn check_rss2d_multiscale() -> Result<Outcome> {
    let w = RegionSs2dWeights::init(&RegionSs2dConfig::new(8).with_state(4), &mut Init::new(1))?;
    for s in [8, 16, 32] {
        let y = region_aware_ss2d(&Init::new(s as u64).uniform(&[1, 8, s, s], 1.0), &w)?;
        ensure!(y.shape() == [1, 8, s, s], "shape {:?} at {s}", y.shape());
    }
    Ok(Outcome::holds(true, "one instance on 8x8, 16x16 and 32x32"))
}

// ---------------------------------------------------------------- CEI

fn cei_weights(seed: u64) -> Result<CeiWeights> {
    Ok(CeiWeights::init(&CeiConfig::new(4).with_state(4), &mut Init::new(seed))?)
}

fn cei_pair(seed: u64, s: usize) -> ModalityPair {
    let mut init = Init::new(seed);
    let scale = 0.1 + 10.0 * init.unit();
    ModalityPair::new(init.uniform(&[1, 4, s, s], scale), init.uniform(&[1, 4, s, s], scale), 3)
        .expect("pair")
}

/// Runs the gate law over 100 random inputs; returns `(gate_ok, magnitude_ok)`.
pub fn cei_gate_law(trials: usize) -> Result<(bool, bool)> {
    let w = cei_weights(3)?;
    let (mut gates_ok, mut mags_ok) = (true, true);
    for k in 0..trials {
        let p = cei_pair(100 + k as u64, 8);
        let (gr, gi) = cei_gates(&p, &w)?;
        gates_ok &= gr.data().iter().chain(gi.data()).all(|&g| g > 0.0 && g < 1.0);
        let out = cei_forward(&p, &w)?;
        mags_ok &= out
            .rgb
            .data()
            .iter()
            .zip(p.rgb.data())
            .chain(out.ir.data().iter().zip(p.ir.data()))
            .all(|(o, i)| o.abs() >= i.abs() && (*i == 0.0 || o.signum() == i.signum()));
    }
    Ok((gates_ok, mags_ok))
}

fn check_cei_gate_range() -> Result<Outcome> {
    Ok(Outcome::holds(cei_gate_law(100)?.0, "every gate in (0, 1) on 100 inputs"))
}

fn check_cei_magnitude() -> Result<Outcome> {
    Ok(Outcome::holds(cei_gate_law(100)?.1, "|out| >= |in| with signs kept on 100 inputs"))
}

fn check_cei_half_gate() -> Result<Outcome> {
    let mut w = cei_weights(4)?;
    w.out_proj = zero_conv(8, 8, 1, 1, true);
    let p = cei_pair(5, 8);
    let out = cei_forward(&p, &w)?;
    Ok(Outcome::exact(out.rgb.max_abs_diff(&p.rgb.scale(1.5)), "gate 0.5 scales by exactly 1.5"))
}

fn check_cei_resolution() -> Result<Outcome> {
    let w = cei_weights(6)?;
    for s in [64, 32] {
        ensure!(cei_forward(&cei_pair(7, s), &w)?.rgb.shape() == [1, 4, s, s]);
    }
    Ok(Outcome::holds(true, "one instance on 64x64 and 32x32"))
}

fn check_fuse_selectors() -> Result<Outcome> {
    let p = cei_pair(8, 4);
    let sel = |off: usize| {
        let m = Tensor::from_fn(&[4, 8], |i| ((i % 8) == i / 8 + off) as u8 as f64);
        ConvWeights::pointwise(&m, None).unwrap()
    };
    let diff = fuse_project(&p, &sel(0))?.max_abs_diff(&p.rgb) + fuse_project(&p, &sel(4))?.max_abs_diff(&p.ir);
    Ok(Outcome::exact(diff, "[I|0] selects RGB, [0|I] selects IR"))
}

// ---------------------------------------------------------------- attention

fn attn(pos_scale: f64, seed: u64) -> Result<AttentionWeights> {
    Ok(AttentionWeights::init(&AttentionConfig { pos_scale, ..AttentionConfig::new(8) }, &mut Init::new(seed))?)
}

fn check_attn_rows() -> Result<Outcome> {
    let a = attention_weights(&Init::new(1).uniform(&[1, 8, 4, 4], 2.0), &attn(1.0, 2)?)?;
    let worst = a.data().chunks(16).fold(0.0f64, |m, r| m.max((r.iter().sum::<f64>() - 1.0).abs()));
    Ok(Outcome::at_most(worst, 1e-12, "attention rows sum to one"))
}

fn check_attn_collapse() -> Result<Outcome> {
    let mut w = attn(1.0, 3)?;
    w.zero_residual_paths();
    let x = Init::new(4).uniform(&[1, 8, 3, 3], 2.0);
    let id = Affine::identity(8);
    let ln = |t: &Tensor| normalize(t, NormKind::Layer, &id, NORM_EPS);
    Ok(Outcome::exact(deep_attention(&x, &w)?.max_abs_diff(&ln(&ln(&x)?)?), "zeroed paths give LN(LN(x))"))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn check_attn_equivariance() -> Result<Outcome> {
    let w = attn(0.0, 5)?;
    let x = Init::new(6).uniform(&[1, 8, 2, 2], 1.0);
    let y = deep_attention(&x, &w)?;
    let permute = |t: &Tensor, p: &[usize]| Tensor::from_fn(&[1, 8, 2, 2], |i| t.data()[(i / 4) * 4 + p[i % 4]]);
    let perms = permutations(4);
    let mut worst: f64 = 0.0;
    for p in &perms {
        let yp = deep_attention(&permute(&x, p), &w)?;
        worst = worst.max(yp.max_abs_diff(&permute(&y, p)));
    }
    Ok(Outcome::at_most(worst, 1e-12, format!("{} token permutations on a 2x2 grid", perms.len())))
}

// ---------------------------------------------------------------- completion / MPF

fn check_completion_half() -> Result<Outcome> {
    let w = CompletionWeights::init(4, 4, 4, &mut Init::new(1))?;
    let feat = Init::new(2).uniform(&[1, 4, 6, 6], 1.0);
    let r = completion_branch(&feat, &Tensor::zeros(&[1, 4, 6, 6]), &w)?;
    let full = conv2d(&region_aware_ss2d(&feat, &w.scan)?, &w.dw)?;
    Ok(Outcome::exact(r.max_abs_diff(&full.scale(0.5)), "zero fused map gives gate 0.5"))
}

fn check_completion_bound() -> Result<Outcome> {
    let w = CompletionWeights::init(4, 4, 4, &mut Init::new(3))?;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..10 {
        let feat = Init::new(10 + k).uniform(&[1, 4, 6, 6], 1.0);
        let fuse = Init::new(20 + k).uniform(&[1, 4, 6, 6], 3.0);
        let r = completion_branch(&feat, &fuse, &w)?;
        let full = conv2d(&region_aware_ss2d(&feat, &w.scan)?, &w.dw)?;
        worst = worst.max(r.max_abs() - full.max_abs());
    }
    Ok(Outcome::at_most(worst, 0.0, "max |R| - max |DW(R-SS2D)| over 10 inputs"))
}

fn mpf_levels(c: usize, size: usize, seed: u64) -> Vec<ModalityPair> {
    let mut init = Init::new(seed);
    (0..3)
        .map(|i| {
            let e = size >> (3 + i);
            ModalityPair::new(init.uniform(&[1, c, e, e], 1.0), init.uniform(&[1, c, e, e], 1.0), 3 + i)
                .expect("pair")
        })
        .collect()
}

fn mpf_weights(seed: u64) -> Result<MpfWeights> {
    Ok(MpfWeights::init(&MpfConfig::new([8, 8, 8], 16).with_state(4), &mut Init::new(seed))?)
}

fn check_mpf_shapes() -> Result<Outcome> {
    let w = mpf_weights(1)?;
    for size in [64, 128, 256] {
        let out = mpf_forward(&mpf_levels(8, size, 2), &w)?;
        let e = size / 8;
        ensure!(out.p3.shape() == [1, 16, e, e] && out.n4.shape() == [1, 16, e / 2, e / 2] && out.n5.shape() == [1, 16, e / 4, e / 4]);
    }
    Ok(Outcome::holds(true, "P3/N4/N5 at strides 8/16/32 for 64, 128, 256 inputs"))
}

fn check_mpf_zero_completion() -> Result<Outcome> {
    let mut w = mpf_weights(3)?;
    w.zero_completion_outputs();
    let lv = mpf_levels(8, 64, 4);
    let a = mpf_forward(&lv, &w)?;
    let b = mpf_forward(&lv, &w.without_completion())?;
    let diff = a.p3.max_abs_diff(&b.p3).max(a.n4.max_abs_diff(&b.n4)).max(a.n5.max_abs_diff(&b.n5));
    Ok(Outcome::exact(diff, "zeroed completion output equals the branch-free pyramid"))
}

fn check_mpf_determinism() -> Result<Outcome> {
    let a = mpf_forward(&mpf_levels(8, 64, 6), &mpf_weights(5)?)?;
    let b = mpf_forward(&mpf_levels(8, 64, 6), &mpf_weights(5)?)?;
    Ok(Outcome::holds(a == b, "two seeded runs are bit-identical"))
}

// ---------------------------------------------------------------- adapter

fn check_mask_4x4() -> Result<Outcome> {
    let ones = low_frequency_mask(4, 4, 0.5).sum();
    Ok(Outcome::exact((ones - 9.0).abs(), format!("{ones} ones at rho 0.5")))
}

fn check_mask_partition() -> Result<Outcome> {
    let x = Init::new(1).uniform(&[1, 2, 8, 6], 1.0);
    let full = centered_spectrum(&x)?;
    let pair = frequency_split(&x, 0.5)?;
    let diff = pair
        .low
        .data
        .iter()
        .zip(&pair.high.data)
        .zip(&full.data)
        .fold(0.0f64, |m, ((l, h), f)| m.max((l + h - f).norm()));
    Ok(Outcome::exact(diff, "low + high reproduces the spectrum"))
}

fn check_spectrum_roundtrip() -> Result<Outcome> {
    let x = Init::new(2).uniform(&[1, 3, 16, 12], 1.0);
    let err = centered_spectrum(&x)?.to_spatial()?.max_abs_diff(&x);
    Ok(Outcome::at_most(err, 1e-9, "inverse(forward(x)) = x"))
}

fn check_parseval() -> Result<Outcome> {
    let x = Init::new(3).uniform(&[1, 3, 16, 16], 1.0);
    let energy: f64 = x.data().iter().map(|v| v * v).sum();
    let spec = centered_spectrum(&x)?.energy() / 256.0;
    Ok(Outcome::at_most((spec - energy).abs() / energy, 1e-8, "spectral energy / HW vs spatial energy"))
}

fn check_rho_one() -> Result<Outcome> {
    let x = Init::new(4).uniform(&[1, 2, 8, 8], 1.0);
    let (_, high) = frequency_bands(&x, 1.0)?;
    Ok(Outcome::exact(high.max_abs(), "rho = 1 leaves the high band empty"))
}

fn check_adapter_identity() -> Result<Outcome> {
    let w = AdapterWeights::init(&AdapterConfig::new(8).with_dim(16), &mut Init::new(5))?;
    let x = Init::new(6).uniform(&[1, 8, 8, 8], 3.0);
    Ok(Outcome::exact(adapter_forward(&x, &w)?.max_abs_diff(&x), "zero expert outputs give F = X"))
}

fn check_router_saturation() -> Result<Outcome> {
    let mut w = AdapterWeights::init_active(&AdapterConfig::new(4).with_dim(8), &mut Init::new(7))?;
    w.router = zero_conv(3, 4, 1, 1, true);
    w.router.bias = Some(Tensor::new(vec![3], vec![10.0, -10.0, -10.0])?);
    let x = Init::new(8).uniform(&[1, 4, 5, 5], 1.0);
    let d: Vec<Tensor> = (0..3).map(|i| Init::new(9 + i).uniform(&[1, 4, 5, 5], 1.0)).collect();
    let fused = router_fuse(&x, &d, &w)?;
    Ok(Outcome::at_most(fused.max_abs_diff(&d[0]), 1e-4, "router logits (10, -10, -10) select the spatial expert"))
}

fn check_defaults() -> Result<Outcome> {
    let a = AdapterWeights::init(&AdapterConfig::new(32), &mut Init::new(0))?.config();
    let r = RegionSs2dWeights::init(&RegionSs2dConfig::new(32), &mut Init::new(0))?.config();
    let ok = a.rho == 0.5 && DEFAULT_RHO == 0.5 && a.dim == 128 && ADAPTER_DIM == 128
        && r.rank == 4 && LOW_RANK == 4 && r.groups == 2 && CHANNEL_GROUPS == 2;
    Ok(Outcome::holds(ok, format!("rho {}, adapter dim {}, rank {}, groups {}", a.rho, a.dim, r.rank, r.groups)))
}

// ---------------------------------------------------------------- plumbing

fn check_format_roundtrip() -> Result<Outcome> {
    let store = EncoderWeights::init(&EncoderConfig::small(), 1)?.to_store();
    let back = format::decode(&format::encode(&store)?)?;
    let same = store.len() == back.len()
        && store.iter().zip(back.iter()).all(|((n1, t1), (n2, t2))| {
            n1 == n2 && t1.shape() == t2.shape() && t1.data().iter().zip(t2.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        });
    Ok(Outcome::holds(same, format!("{} tensors survive encode/decode bit-exactly", store.len())))
}

fn check_format_magic() -> Result<Outcome> {
    let mut bytes = format::encode(&WeightStore::new())?;
    bytes[..4].copy_from_slice(b"MMDX");
    let bad = matches!(format::decode(&bytes), Err(format::FormatError::BadMagic(_)));
    Ok(Outcome::holds(bad, "corrupted magic reported as bad magic"))
}

fn check_synth() -> Result<Outcome> {
    let worst = (0..5)
        .map(|s| synth_pair(s, 64).map(|(r, i)| modality_correlation(&r, &i)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok(Outcome::holds(worst > 0.2, format!("lowest RGB/IR correlation {worst:.3} over 5 seeds")))
}

fn check_encoder_shapes() -> Result<Outcome> {
    let w = EncoderWeights::init(&EncoderConfig::small(), 2)?;
    let (rgb, ir) = synth_pair(3, 64)?;
    let out = w.forward(&rgb, &ir)?;
    let ok = out.p3.shape() == [1, 16, 8, 8] && out.n4.shape() == [1, 16, 4, 4] && out.n5.shape() == [1, 16, 2, 2]
        && out.levels().iter().all(|(_, t)| t.all_finite());
    Ok(Outcome::holds(ok, "64x64 input gives finite 8x8, 4x4, 2x2 maps"))
}

fn check_encoder_adapter_identity() -> Result<Outcome> {
    let mut w = EncoderWeights::init(&EncoderConfig::small(), 4)?;
    w.zero_adapter_outputs();
    let (rgb, ir) = synth_pair(5, 32)?;
    let a = w.forward(&rgb, &ir)?;
    let b = w.forward_with(&rgb, &ir, false)?;
    Ok(Outcome::holds(a == b, "zeroed adapters equal the adapter-free wiring"))
}

pub fn registry() -> Vec<Check> {
    macro_rules! checks {
        ($($name:literal => $f:ident),* $(,)?) => {
            vec![$(Check { name: $name, run: $f }),*]
        };
    }
    checks![
        "ss1d.gradient" => check_gradient,
        "ss1d.prefix_sum" => check_prefix_sum,
        "ss1d.causality" => check_causality,
        "ss1d.linearity" => check_linearity,
        "ss1d.rejects_nonpositive_step" => check_rejects_step,
        "ss2d.fold_unfold" => check_fold_unfold,
        "ss2d.transpose_symmetry" => check_transpose_symmetry,
        "rss2d.driving_params" => check_driving_params,
        "rss2d.param_ratio" => check_param_ratio,
        "rss2d.multiscale" => check_rss2d_multiscale,
        "cei.gate_range" => check_cei_gate_range,
        "cei.magnitude_sign" => check_cei_magnitude,
        "cei.half_gate" => check_cei_half_gate,
        "cei.resolution" => check_cei_resolution,
        "fuse.block_selectors" => check_fuse_selectors,
        "attn.row_stochastic" => check_attn_rows,
        "attn.zero_init_collapse" => check_attn_collapse,
        "attn.permutation_equivariance" => check_attn_equivariance,
        "completion.half_gate" => check_completion_half,
        "completion.bound" => check_completion_bound,
        "mpf.shape_law" => check_mpf_shapes,
        "mpf.zero_completion" => check_mpf_zero_completion,
        "mpf.determinism" => check_mpf_determinism,
        "adapter.mask_4x4" => check_mask_4x4,
        "adapter.mask_partition" => check_mask_partition,
        "adapter.spectrum_roundtrip" => check_spectrum_roundtrip,
        "adapter.parseval" => check_parseval,
        "adapter.rho_one" => check_rho_one,
        "adapter.zero_init_identity" => check_adapter_identity,
        "adapter.router_saturation" => check_router_saturation,
        "config.defaults" => check_defaults,
        "format.round_trip" => check_format_roundtrip,
        "format.bad_magic" => check_format_magic,
        "synth.correlation" => check_synth,
        "encoder.shapes" => check_encoder_shapes,
        "encoder.adapter_identity" => check_encoder_adapter_identity,
    ]
}
