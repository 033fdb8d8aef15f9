//! Single-head self-attention over the positions of the deepest level.
//!
//! ```text
//! q = k = x + s * pos        v = x
//! x1 = LN(x + o(softmax(q k^T / sqrt(d)) v))
//! x2 = LN(x1 + ff2(SiLU(ff1(x1))))
//! ```
//!
//! `pos` is a fixed 2D sine/cosine table; `s = 0` removes it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::activation::silu;
use crate::conv::{conv2d, ConvWeights};
use crate::error::{Error, Result};
use crate::init::{zero_conv, Init};
use crate::norm::{normalize, Affine, NormKind};
use crate::store::{join, Params, StoreReader, WeightStore};
use crate::tensor::Tensor;
use crate::NORM_EPS;

const TEMPERATURE: f64 = 10_000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub dim: usize,
    pub ff_mult: usize,
    pub pos_scale: f64,
}

impl AttentionConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ff_mult: 4,
            pos_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub q: ConvWeights,
    pub k: ConvWeights,
    pub v: ConvWeights,
    pub o: ConvWeights,
    pub ln1: Affine,
    pub ff1: ConvWeights,
    pub ff2: ConvWeights,
    pub ln2: Affine,
    pub pos_scale: f64,
}

impl AttentionWeights {
    pub fn init(cfg: &AttentionConfig, init: &mut Init) -> Result<Self> {
        let d = cfg.dim;
        if d == 0 || !d.is_multiple_of(4) {
            return Err(Error::invalid(
                "deep_attention",
                format!("width {d} must be a positive multiple of 4"),
            ));
        }
        let hidden = d * cfg.ff_mult;
        Ok(Self {
            q: init.pointwise(d, d, true),
            k: init.pointwise(d, d, true),
            v: init.pointwise(d, d, true),
            o: init.pointwise(d, d, true),
            ln1: Affine::identity(d),
            ff1: init.pointwise(hidden, d, true),
            ff2: init.pointwise(d, hidden, true),
            ln2: Affine::identity(d),
            pos_scale: cfg.pos_scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.q.out_channels()
    }

    /// Zeroes the value, output and second feed-forward projections, so the
    /// block reduces to `LN(LN(x))`.
    pub fn zero_residual_paths(&mut self) {
        let (d, hidden) = (self.dim(), self.ff2.in_channels());
        self.v = zero_conv(d, d, 1, 1, true);
        self.o = zero_conv(d, d, 1, 1, true);
        self.ff2 = zero_conv(d, hidden, 1, 1, true);
    }

    pub fn param_count(&self) -> usize {
        [&self.q, &self.k, &self.v, &self.o, &self.ff1, &self.ff2]
            .iter()
            .map(|w| w.param_count())
            .sum::<usize>()
            + self.ln1.param_count()
            + self.ln2.param_count()
    }
}

/// `(1, d, h, w)` table; channel blocks are
/// `[sin(x w_k), cos(x w_k), sin(y w_k), cos(y w_k)]` with
/// `w_k = 10000^(-k / (d/4))`.
pub fn sincos_position_encoding(d: usize, h: usize, w: usize) -> Result<Tensor> {
    if !d.is_multiple_of(4) {
        return Err(Error::invalid(
            "sincos_position_encoding",
            format!("width {d} is not a multiple of 4"),
        ));
    }
    let q = d / 4;
    let omega: Vec<f64> = (0..q)
        .map(|k| 1.0 / libm::pow(TEMPERATURE, k as f64 / q as f64))
        .collect();
    let plane = h * w;
    let mut out = vec![0.0; d * plane];
    for (k, &om) in omega.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let (ax, ay) = (x as f64 * om, y as f64 * om);
                out[k * plane + p] = libm::sin(ax);
                out[(q + k) * plane + p] = libm::cos(ax);
                out[(2 * q + k) * plane + p] = libm::sin(ay);
                out[(3 * q + k) * plane + p] = libm::cos(ay);
            }
        }
    }
    Tensor::new(vec![1, d, h, w], out)
}

fn query_key_input(x: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    let (b, d, h, wd) = x.dims4()?;
    if w.pos_scale == 0.0 {
        return Ok(x.clone());
    }
    let pos = sincos_position_encoding(d, h, wd)?.scale(w.pos_scale);
    let plane = d * h * wd;
    Ok(Tensor::from_fn(&[b, d, h, wd], |i| {
        x.data()[i] + pos.data()[i % plane]
    }))
}

/// Row-stochastic attention matrix `(B, HW, HW)`.
pub fn attention_weights(x: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    let (b, d, h, wd) = x.dims4()?;
    if d != w.dim() {
        return Err(Error::shape("deep_attention", x.shape(), w.q.kernel.shape()));
    }
    let qk = query_key_input(x, w)?;
    let q = conv2d(&qk, &w.q)?;
    let k = conv2d(&qk, &w.k)?;
    let l = h * wd;
    let scale = 1.0 / libm::sqrt(d as f64);
    let mut out = vec![0.0; b * l * l];
    let mut qi = vec![0.0; d];
    for bi in 0..b {
        let (qb, kb) = (&q.data()[bi * d * l..][..d * l], &k.data()[bi * d * l..][..d * l]);
        for i in 0..l {
            for (c, v) in qi.iter_mut().enumerate() {
                *v = qb[c * l + i];
            }
            let row = &mut out[(bi * l + i) * l..][..l];
            for (j, r) in row.iter_mut().enumerate() {
                *r = qi.iter().enumerate().map(|(c, v)| v * kb[c * l + j]).sum::<f64>() * scale;
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for r in row.iter_mut() {
                *r = libm::exp(*r - max);
                total += *r;
            }
            row.iter_mut().for_each(|r| *r /= total);
        }
    }
    Tensor::new(vec![b, l, l], out)
}

pub fn deep_attention(x: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    let (b, d, h, wd) = x.dims4()?;
    let attn = attention_weights(x, w)?;
    let v = conv2d(x, &w.v)?;
    let l = h * wd;
    let mut mixed = vec![0.0; x.len()];
    for bi in 0..b {
        let a = &attn.data()[bi * l * l..][..l * l];
        let vb = &v.data()[bi * d * l..][..d * l];
        let dst = &mut mixed[bi * d * l..][..d * l];
        for c in 0..d {
            let vc = &vb[c * l..][..l];
            for i in 0..l {
                dst[c * l + i] = a[i * l..][..l].iter().zip(vc).map(|(p, v)| p * v).sum();
            }
        }
    }
    let o = conv2d(&Tensor::new(x.shape().to_vec(), mixed)?, &w.o)?;
    let x1 = normalize(&x.add(&o)?, NormKind::Layer, &w.ln1, NORM_EPS)?;
    let ff = conv2d(&conv2d(&x1, &w.ff1)?.map(silu), &w.ff2)?;
    normalize(&x1.add(&ff)?, NormKind::Layer, &w.ln2, NORM_EPS)?.ensure_finite("deep_attention")
}

impl Params for AttentionWeights {
    fn export(&self, prefix: &str, s: &mut WeightStore) {
        let p = |n: &str| join(prefix, n);
        for (name, w) in [
            ("q", &self.q),
            ("k", &self.k),
            ("v", &self.v),
            ("o", &self.o),
            ("ff1", &self.ff1),
            ("ff2", &self.ff2),
        ] {
            s.put_conv(&p(name), w);
        }
        s.put_affine(&p("ln1"), &self.ln1);
        s.put_affine(&p("ln2"), &self.ln2);
        s.put_scalar(p("pos_scale"), self.pos_scale);
    }

    fn import(prefix: &str, r: &mut StoreReader<'_>) -> Self {
        let p = |n: &str| join(prefix, n);
        Self {
            q: r.conv(&p("q"), 1),
            k: r.conv(&p("k"), 1),
            v: r.conv(&p("v"), 1),
            o: r.conv(&p("o"), 1),
            ln1: r.affine(&p("ln1")),
            ff1: r.conv(&p("ff1"), 1),
            ff2: r.conv(&p("ff2"), 1),
            ln2: r.affine(&p("ln2")),
            pos_scale: r.scalar(&p("pos_scale")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(d: usize, seed: u64) -> AttentionWeights {
        AttentionWeights::init(&AttentionConfig::new(d), &mut Init::new(seed)).unwrap()
    }

    #[test]
    fn rows_sum_to_one() {
        let w = weights(8, 1);
        let x = Init::new(2).uniform(&[2, 8, 3, 4], 1.0);
        let a = attention_weights(&x, &w).unwrap();
        for row in a.data().chunks(12) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn zeroed_residual_paths_collapse_to_double_norm() {
        let mut w = weights(8, 3);
        w.zero_residual_paths();
        let x = Init::new(4).uniform(&[1, 8, 4, 4], 2.0);
        let id = Affine::identity(8);
        let ln = |t: &Tensor| normalize(t, NormKind::Layer, &id, NORM_EPS).unwrap();
        assert_eq!(deep_attention(&x, &w).unwrap(), ln(&ln(&x)));
    }

    #[test]
    fn encoding_layout() {
        let pe = sincos_position_encoding(8, 2, 3).unwrap();
        // position (y=1, x=2), k=0: sin(2), cos(2), sin(1), cos(1)
        let at = |c: usize| pe.at4(0, c, 1, 2);
        assert_eq!(at(0), libm::sin(2.0));
        assert_eq!(at(2), libm::cos(2.0));
        assert_eq!(at(4), libm::sin(1.0));
        assert_eq!(at(6), libm::cos(1.0));
        assert!(sincos_position_encoding(6, 2, 2).is_err());
    }

    #[test]
    fn position_encoding_breaks_equivariance() {
        let w = weights(8, 5);
        let x = Init::new(6).uniform(&[1, 8, 1, 2], 1.0);
        let swapped = Tensor::from_fn(&[1, 8, 1, 2], |i| x.data()[i ^ 1]);
        let y = deep_attention(&x, &w).unwrap();
        let ys = deep_attention(&swapped, &w).unwrap();
        let back = Tensor::from_fn(&[1, 8, 1, 2], |i| ys.data()[i ^ 1]);
        assert!(back.max_abs_diff(&y) > 1e-9);
    }

    #[test]
    fn store_round_trip() {
        let w = weights(8, 7);
        assert_eq!(AttentionWeights::from_store(&w.to_store()).unwrap(), w);
    }
}
