//! Straight-line reference implementations used to cross-check the library.
//!
//! Everything here works on plain nested loops over `Vec<f64>` and reads the
//! library's weight structs only for their raw tensors. None of the
//! library's kernels (convolution, normalization, scanning, transforms) are
//! called.
#![allow(dead_code, clippy::needless_range_loop, clippy::too_many_arguments)]

use std::f64::consts::PI;

use mmfuse_core::adapter::AdapterWeights;
use mmfuse_core::conv::ConvWeights;
use mmfuse_core::encoder::{
    AttentionWeights, CeiWeights, CompletionWeights, Junction, ModalityPair, MpfWeights,
    PyramidFeatures,
};
use mmfuse_core::norm::Affine;
use mmfuse_core::pipeline::EncoderWeights;
use mmfuse_core::scan::{Direction, RegionSs2dWeights};
use mmfuse_core::Tensor;

const EPS: f64 = 1e-5;
const FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct Map {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Map {
    pub fn zeros(b: usize, c: usize, h: usize, w: usize) -> Self {
        Self { b, c, h, w, v: vec![0.0; b * c * h * w] }
    }

    pub fn of(t: &Tensor) -> Self {
        let s = t.shape();
        Self { b: s[0], c: s[1], h: s[2], w: s[3], v: t.data().to_vec() }
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::new(vec![self.b, self.c, self.h, self.w], self.v.clone()).unwrap()
    }

    fn idx(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.c + c) * self.h + y) * self.w + x
    }

    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.v[self.idx(b, c, y, x)]
    }

    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, val: f64) {
        let i = self.idx(b, c, y, x);
        self.v[i] = val;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { v: self.v.iter().map(|&x| f(x)).collect(), ..self.clone() }
    }

    pub fn add(&self, o: &Map) -> Self {
        assert_eq!(self.v.len(), o.v.len());
        Self { v: self.v.iter().zip(&o.v).map(|(a, b)| a + b).collect(), ..self.clone() }
    }

    pub fn mul(&self, o: &Map) -> Self {
        assert_eq!(self.v.len(), o.v.len());
        Self { v: self.v.iter().zip(&o.v).map(|(a, b)| a * b).collect(), ..self.clone() }
    }

    pub fn channels(&self, start: usize, len: usize) -> Self {
        let mut out = Map::zeros(self.b, len, self.h, self.w);
        for b in 0..self.b {
            for c in 0..len {
                for y in 0..self.h {
                    for x in 0..self.w {
                        out.set(b, c, y, x, self.get(b, start + c, y, x));
                    }
                }
            }
        }
        out
    }

    pub fn cat(parts: &[&Map]) -> Self {
        let c: usize = parts.iter().map(|p| p.c).sum();
        let p0 = parts[0];
        let mut out = Map::zeros(p0.b, c, p0.h, p0.w);
        for b in 0..p0.b {
            let mut off = 0;
            for p in parts {
                for ch in 0..p.c {
                    for y in 0..p.h {
                        for x in 0..p.w {
                            out.set(b, off + ch, y, x, p.get(b, ch, y, x));
                        }
                    }
                }
                off += p.c;
            }
        }
        out
    }

    /// Multiplies each channel by `g[b][c]`.
    pub fn gate(&self, g: &[Vec<f64>]) -> Self {
        let mut out = self.clone();
        for b in 0..self.b {
            for c in 0..self.c {
                for y in 0..self.h {
                    for x in 0..self.w {
                        out.set(b, c, y, x, self.get(b, c, y, x) * g[b][c]);
                    }
                }
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn conv(x: &Map, w: &ConvWeights, stride: usize) -> Map {
    let k = w.kernel.shape();
    let (co, cig, kk) = (k[0], k[1], k[2]);
    let g = w.groups;
    let cog = co / g;
    let pad = (kk / 2) as isize;
    let ho = (x.h + 2 * (kk / 2) - kk) / stride + 1;
    let wo = (x.w + 2 * (kk / 2) - kk) / stride + 1;
    let kv = |o: usize, i: usize, ky: usize, kx: usize| w.kernel.data()[((o * cig + i) * kk + ky) * kk + kx];
    let mut out = Map::zeros(x.b, co, ho, wo);
    for b in 0..x.b {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = w.bias.as_ref().map_or(0.0, |t| t.data()[o]);
                    for i in 0..cig {
                        let ic = (o / cog) * cig + i;
                        for ky in 0..kk {
                            for kx in 0..kk {
                                let iy = (oy * stride + ky) as isize - pad;
                                let ix = (ox * stride + kx) as isize - pad;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                    acc += kv(o, i, ky, kx) * x.get(b, ic, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.set(b, o, oy, ox, acc);
                }
            }
        }
    }
    out
}

pub fn layer_norm(x: &Map, a: &Affine) -> Map {
    let (g, be) = (a.gamma.data(), a.beta.data());
    let mut out = x.clone();
    for b in 0..x.b {
        for y in 0..x.h {
            for xx in 0..x.w {
                let vals: Vec<f64> = (0..x.c).map(|c| x.get(b, c, y, xx)).collect();
                let mean = vals.iter().sum::<f64>() / x.c as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.c as f64;
                for c in 0..x.c {
                    out.set(b, c, y, xx, (vals[c] - mean) / (var + EPS).sqrt() * g[c] + be[c]);
                }
            }
        }
    }
    out
}

pub fn group_norm(x: &Map, groups: usize, a: &Affine) -> Map {
    let (g, be) = (a.gamma.data(), a.beta.data());
    let cg = x.c / groups;
    let mut out = x.clone();
    for b in 0..x.b {
        for gi in 0..groups {
            let mut vals = Vec::new();
            for c in gi * cg..(gi + 1) * cg {
                for y in 0..x.h {
                    for xx in 0..x.w {
                        vals.push(x.get(b, c, y, xx));
                    }
                }
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            for c in gi * cg..(gi + 1) * cg {
                for y in 0..x.h {
                    for xx in 0..x.w {
                        let v = (x.get(b, c, y, xx) - mean) / (var + EPS).sqrt();
                        out.set(b, c, y, xx, v * g[c] + be[c]);
                    }
                }
            }
        }
    }
    out
}

pub fn adaptive_pool(x: &Map, th: usize, tw: usize) -> Map {
    let mut out = Map::zeros(x.b, x.c, th, tw);
    for b in 0..x.b {
        for c in 0..x.c {
            for i in 0..th {
                let (y0, y1) = (i * x.h / th, ((i + 1) * x.h).div_ceil(th));
                for j in 0..tw {
                    let (x0, x1) = (j * x.w / tw, ((j + 1) * x.w).div_ceil(tw));
                    let mut s = 0.0;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            s += x.get(b, c, y, xx);
                        }
                    }
                    out.set(b, c, i, j, s / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
    }
    out
}

/// `gap[b][c]`.
pub fn gap(x: &Map) -> Vec<Vec<f64>> {
    let p = adaptive_pool(x, 1, 1);
    (0..x.b).map(|b| (0..x.c).map(|c| p.get(b, c, 0, 0)).collect()).collect()
}

pub fn upsample2(x: &Map) -> Map {
    let mut out = Map::zeros(x.b, x.c, 2 * x.h, 2 * x.w);
    for b in 0..x.b {
        for c in 0..x.c {
            for y in 0..2 * x.h {
                for xx in 0..2 * x.w {
                    out.set(b, c, y, xx, x.get(b, c, y / 2, xx / 2));
                }
            }
        }
    }
    out
}

/// Grid cell visited at step `t` of a scan in direction `d`.
pub fn visit(d: Direction, t: usize, h: usize, w: usize) -> (usize, usize) {
    let n = h * w;
    match d {
        Direction::HFwd => (t / w, t % w),
        Direction::HBwd => ((n - 1 - t) / w, (n - 1 - t) % w),
        Direction::VFwd => (t % h, t / h),
        Direction::VBwd => ((n - 1 - t) % h, (n - 1 - t) / h),
    }
}

/// Selective scan along direction `d` over spatial maps; `a` is `(D, N)`.
pub fn scan2d(d: Direction, u: &Map, delta: &Map, a: &Tensor, bm: &Map, cm: &Map) -> Map {
    let n = a.shape()[1];
    let mut out = Map::zeros(u.b, u.c, u.h, u.w);
    for b in 0..u.b {
        for ch in 0..u.c {
            let mut state = vec![0.0; n];
            for t in 0..u.h * u.w {
                let (y, x) = visit(d, t, u.h, u.w);
                let dt = delta.get(b, ch, y, x);
                let mut acc = 0.0;
                for k in 0..n {
                    let abar = (dt * a.data()[ch * n + k]).exp();
                    state[k] = abar * state[k] + dt * bm.get(b, k, y, x) * u.get(b, ch, y, x);
                    acc += cm.get(b, k, y, x) * state[k];
                }
                out.set(b, ch, y, x, acc);
            }
        }
    }
    out
}

pub fn region_ss2d(x: &Map, w: &RegionSs2dWeights) -> Map {
    let ctx = conv(&group_norm(x, w.gn_groups, &w.gn), &w.dw3, 1).map(silu);
    let pair = |d: &ConvWeights, u: &ConvWeights| conv(&conv(&ctx, d, 1), u, 1);
    let u = pair(&w.u_down, &w.u_up);
    let delta = pair(&w.delta_down, &w.delta_up).map(|v| softplus(v).max(FLOOR));
    let gate = pair(&w.gate_down, &w.gate_up).map(silu);
    let bc = pair(&w.bc_down, &w.bc_up);
    let groups = w.bc_down.groups;
    let n = w.a[0].1.shape()[1];
    let inner = u.c;
    let cg = inner / groups;
    let mut parts = Vec::new();
    for g in 0..groups {
        let ug = u.channels(g * cg, cg);
        let dg = delta.channels(g * cg, cg);
        let bg = bc.channels(g * 2 * n, n);
        let cgm = bc.channels(g * 2 * n + n, n);
        let mut acc: Option<Map> = None;
        for (dir, a) in &w.a {
            let rows = Tensor::new(vec![cg, n], a.data()[g * cg * n..(g + 1) * cg * n].to_vec()).unwrap();
            let y = scan2d(*dir, &ug, &dg, &rows, &bg, &cgm);
            acc = Some(match acc {
                None => y,
                Some(p) => p.add(&y),
            });
        }
        parts.push(acc.unwrap());
    }
    let refs: Vec<&Map> = parts.iter().collect();
    conv(&Map::cat(&refs).mul(&gate), &w.out_proj, 1)
}

/// Returns `(gates_rgb, gates_ir)` as `[b][c]`.
pub fn cei_gates(rgb: &Map, ir: &Map, w: &CeiWeights) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let c = rgb.c;
    let z = adaptive_pool(&Map::cat(&[rgb, ir]), w.pool.0.min(rgb.h), w.pool.1.min(rgb.w));
    let uz = conv(&conv(&z, &w.in_down, 1), &w.in_up, 1).map(silu);
    let d = uz.c / 2;
    let u = uz.channels(0, d);
    let zg = uz.channels(d, d);
    let delta = conv(&conv(&u, &w.delta_down, 1), &w.delta_up, 1).map(|v| softplus(v).max(FLOOR));
    let bc = conv(&u, &w.bc_proj, 1);
    let n = bc.c / 2;
    let y = scan2d(Direction::HFwd, &u, &delta, &w.a, &bc.channels(0, n), &bc.channels(n, n)).mul(&zg);
    let logits = conv(&layer_norm(&y, &w.ln), &w.out_proj, 1);
    let g = gap(&logits);
    let sg: Vec<Vec<f64>> = g.iter().map(|r| r.iter().map(|&v| sigmoid(v)).collect()).collect();
    (
        sg.iter().map(|r| r[..c].to_vec()).collect(),
        sg.iter().map(|r| r[c..].to_vec()).collect(),
    )
}

pub fn cei(rgb: &Map, ir: &Map, w: &CeiWeights) -> (Map, Map) {
    let (gr, gi) = cei_gates(rgb, ir, w);
    (rgb.add(&rgb.gate(&gr)), ir.add(&ir.gate(&gi)))
}

/// Centered-spectrum band reconstructions by direct DFT sums.
pub fn bands(x: &Map, rho: f64) -> (Map, Map) {
    let (h0, w0) = (x.h, x.w);
    let (h, w) = (h0 + h0 % 2, w0 + w0 % 2);
    let mut lo = Map::zeros(x.b, x.c, h0, w0);
    let mut hi = Map::zeros(x.b, x.c, h0, w0);
    let radius = rho * h as f64 / 2.0;
    for b in 0..x.b {
        for c in 0..x.c {
            let px = |y: usize, xx: usize| if y < h0 && xx < w0 { x.get(b, c, y, xx) } else { 0.0 };
            // spectrum indexed by signed-shifted frequency: centered index u
            // holds frequency (u - h/2) mod h
            let mut spec = vec![(0.0, 0.0); h * w];
            for u in 0..h {
                for v in 0..w {
                    let (fy, fx) = ((u + h - h / 2) % h, (v + w - w / 2) % w);
                    let (mut re, mut im) = (0.0, 0.0);
                    for y in 0..h {
                        for xx in 0..w {
                            let ang = -2.0 * PI * ((fy * y) as f64 / h as f64 + (fx * xx) as f64 / w as f64);
                            re += px(y, xx) * ang.cos();
                            im += px(y, xx) * ang.sin();
                        }
                    }
                    spec[u * w + v] = (re, im);
                }
            }
            for y in 0..h0 {
                for xx in 0..w0 {
                    let (mut l, mut hsum) = (0.0, 0.0);
                    for u in 0..h {
                        for v in 0..w {
                            let (fy, fx) = ((u + h - h / 2) % h, (v + w - w / 2) % w);
                            let ang = 2.0 * PI * ((fy * y) as f64 / h as f64 + (fx * xx) as f64 / w as f64);
                            let (re, im) = spec[u * w + v];
                            let real = re * ang.cos() - im * ang.sin();
                            let du = (u as f64 - (h / 2) as f64).abs();
                            let dv = (v as f64 - (w / 2) as f64).abs();
                            if du.max(dv) <= radius {
                                l += real;
                            } else {
                                hsum += real;
                            }
                        }
                    }
                    lo.set(b, c, y, xx, l / (h * w) as f64);
                    hi.set(b, c, y, xx, hsum / (h * w) as f64);
                }
            }
        }
    }
    (lo, hi)
}

pub fn adapter(x: &Map, w: &AdapterWeights) -> Map {
    let xt = conv(&layer_norm(x, &w.ln), &w.down_proj, 1);
    let avg = conv(&xt, &w.dw3, 1).add(&conv(&xt, &w.dw5, 1)).add(&conv(&xt, &w.dw7, 1)).map(|v| v / 3.0);
    let spatial = conv(&avg.add(&xt).add(&conv(&avg, &w.mix_proj, 1)), &w.spatial_out, 1);
    let (lo, hi) = bands(&xt, w.rho);
    let expert = |band: &Map, dw: &ConvWeights, ca: &ConvWeights, out: &ConvWeights| {
        let e = conv(band, dw, 1);
        let pooled = Map { h: 1, w: 1, v: gap(&e).concat(), ..e.clone() };
        let g = conv(&pooled, ca, 1);
        let gates: Vec<Vec<f64>> = (0..e.b).map(|b| (0..e.c).map(|c| sigmoid(g.get(b, c, 0, 0))).collect()).collect();
        conv(&e.gate(&gates), out, 1)
    };
    let low = expert(&lo, &w.freq_dw_low, &w.ca_low, &w.freq_out_low);
    let high = expert(&hi, &w.freq_dw_high, &w.ca_high, &w.freq_out_high);
    let r = conv(x, &w.router, 1);
    let mut out = x.clone();
    for b in 0..x.b {
        for y in 0..x.h {
            for xx in 0..x.w {
                let logits: Vec<f64> = (0..3).map(|e| r.get(b, e, y, xx)).collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let s: f64 = ex.iter().sum();
                for c in 0..x.c {
                    let d = ex[0] / s * spatial.get(b, c, y, xx)
                        + ex[1] / s * low.get(b, c, y, xx)
                        + ex[2] / s * high.get(b, c, y, xx);
                    out.set(b, c, y, xx, x.get(b, c, y, xx) + d);
                }
            }
        }
    }
    out
}

pub fn attention(x: &Map, w: &AttentionWeights) -> Map {
    let (d, h, wd) = (x.c, x.h, x.w);
    let l = h * wd;
    let mut qk_in = x.clone();
    if w.pos_scale != 0.0 {
        let q4 = d / 4;
        for b in 0..x.b {
            for k in 0..q4 {
                let om = 1.0 / 10_000f64.powf(k as f64 / q4 as f64);
                for y in 0..h {
                    for xx in 0..wd {
                        let enc = [
                            (xx as f64 * om).sin(),
                            (xx as f64 * om).cos(),
                            (y as f64 * om).sin(),
                            (y as f64 * om).cos(),
                        ];
                        for (j, e) in enc.iter().enumerate() {
                            let c = j * q4 + k;
                            qk_in.set(b, c, y, xx, x.get(b, c, y, xx) + w.pos_scale * e);
                        }
                    }
                }
            }
        }
    }
    let q = conv(&qk_in, &w.q, 1);
    let k = conv(&qk_in, &w.k, 1);
    let v = conv(x, &w.v, 1);
    let mut mixed = Map::zeros(x.b, d, h, wd);
    for b in 0..x.b {
        for i in 0..l {
            let (yi, xi) = (i / wd, i % wd);
            let scores: Vec<f64> = (0..l)
                .map(|j| {
                    let (yj, xj) = (j / wd, j % wd);
                    (0..d).map(|c| q.get(b, c, yi, xi) * k.get(b, c, yj, xj)).sum::<f64>() / (d as f64).sqrt()
                })
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let tot: f64 = e.iter().sum();
            for c in 0..d {
                let s: f64 = (0..l).map(|j| e[j] / tot * v.get(b, c, j / wd, j % wd)).sum();
                mixed.set(b, c, yi, xi, s);
            }
        }
    }
    let x1 = layer_norm(&x.add(&conv(&mixed, &w.o, 1)), &w.ln1);
    let ff = conv(&conv(&x1, &w.ff1, 1).map(silu), &w.ff2, 1);
    layer_norm(&x1.add(&ff), &w.ln2)
}

pub fn completion(feat: &Map, fuse: &Map, w: &CompletionWeights) -> Map {
    let e = conv(&region_ss2d(feat, &w.scan), &w.dw, 1);
    let g: Vec<Vec<f64>> = gap(fuse).iter().map(|r| r.iter().map(|&v| sigmoid(v)).collect()).collect();
    e.gate(&g)
}

fn junction(j: &Junction, prev: &Map, same: &Map, rgb: &Map, ir: &Map) -> Map {
    let mut parts = vec![prev.clone(), same.clone()];
    if let Some(c) = &j.ir {
        parts.push(completion(ir, same, c));
    }
    if let Some(c) = &j.rgb {
        parts.push(completion(rgb, same, c));
    }
    let refs: Vec<&Map> = parts.iter().collect();
    let z = conv(&Map::cat(&refs), &j.block.reduce, 1).map(silu);
    z.add(&conv(&z, &j.block.conv, 1).map(silu))
}

/// Levels as `(rgb, ir)` for 3, 4, 5.
pub fn mpf(levels: &[(Map, Map)], w: &MpfWeights) -> [Map; 3] {
    let f: Vec<Map> = levels
        .iter()
        .zip(&w.fuse_proj)
        .map(|((r, i), p)| conv(&Map::cat(&[r, i]), p, 1))
        .collect();
    let f5 = attention(&f[2], &w.attn);
    let p4 = junction(&w.td4, &upsample2(&f5), &f[1], &levels[1].0, &levels[1].1);
    let p3 = junction(&w.td3, &upsample2(&p4), &f[0], &levels[0].0, &levels[0].1);
    let n4 = junction(&w.bu4, &conv(&p3, &w.down3, 2), &p4, &levels[1].0, &levels[1].1);
    let n5 = junction(&w.bu5, &conv(&n4, &w.down4, 2), &f5, &levels[2].0, &levels[2].1);
    [p3, n4, n5]
}

pub fn encoder(rgb: &Map, ir: &Map, w: &EncoderWeights) -> [Map; 3] {
    let ir3 = if ir.c == 1 { Map::cat(&[ir, ir, ir]) } else { ir.clone() };
    let bb = &w.backbone;
    let stem = |x: &Map| conv(&conv(x, &bb.stem[0], 2).map(silu), &bb.stem[1], 2).map(silu);
    let (mut xr, mut xi) = (stem(rgb), stem(&ir3));
    let mut levels = Vec::new();
    for s in 0..3 {
        let st = &bb.stages[s];
        let stage = |x: &Map| conv(&conv(&conv(x, &st.conv1, 1).map(silu), &st.conv2, 1).map(silu), &st.down, 2);
        xr = adapter(&stage(&xr), &w.adapters_rgb[s]);
        xi = adapter(&stage(&xi), &w.adapters_ir[s]);
        levels.push(cei(&xr, &xi, w.cei_for_level(s)));
    }
    mpf(&levels, &w.mpf)
}

pub fn max_diff(a: &Tensor, b: &Map) -> f64 {
    assert_eq!(a.shape(), &[b.b, b.c, b.h, b.w]);
    a.data().iter().zip(&b.v).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn pair_maps(p: &ModalityPair) -> (Map, Map) {
    (Map::of(&p.rgb), Map::of(&p.ir))
}

pub fn pyramid_diff(p: &PyramidFeatures, o: &[Map; 3]) -> f64 {
    max_diff(&p.p3, &o[0]).max(max_diff(&p.n4, &o[1])).max(max_diff(&p.n5, &o[2]))
}
