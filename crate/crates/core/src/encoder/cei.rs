//! Channel-gating interaction between the two modalities.

use alloc::format;

use super::ModalityPair;
use crate::activation::{sigmoid, silu, softplus};
use crate::conv::{conv2d, ConvWeights};
use crate::error::{Error, Result};
use crate::init::{state_matrix, Init};
use crate::norm::{normalize, Affine, NormKind};
use crate::resample::{global_avg_pool, resample, Resample};
use crate::scan::{ss2d, Direction, DirectionalScan, DELTA_FLOOR};
use crate::store::{join, Params, StoreReader, WeightStore};
use crate::tensor::{concat_channels, Tensor};
use crate::{LOW_RANK, NORM_EPS, STATE_DIM};

/// Pooled grid; the scanned sequence has `8 * 8 = 64` steps. Maps smaller
/// than the grid are pooled to their own extent instead.
pub const CEI_POOL: (usize, usize) = (8, 8);

#[derive(Clone, Debug, PartialEq)]
pub struct CeiConfig {
    /// Per-modality channel count `C`.
    pub channels: usize,
    /// Scan width; defaults to `2C`.
    pub inner: usize,
    pub rank: usize,
    pub state: usize,
    pub pool: (usize, usize),
}

impl CeiConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            inner: 2 * channels,
            rank: LOW_RANK,
            state: STATE_DIM,
            pool: CEI_POOL,
        }
    }

    pub fn with_state(mut self, state: usize) -> Self {
        self.state = state;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CeiWeights {
    pub pool: (usize, usize),
    /// Low-rank pair `2C -> r -> 2 * D_in`, split into the driving and
    /// gating halves.
    pub in_down: ConvWeights,
    pub in_up: ConvWeights,
    pub delta_down: ConvWeights,
    pub delta_up: ConvWeights,
    /// `D_in -> 2N`, laid out `[B | C]`.
    pub bc_proj: ConvWeights,
    /// `(D_in, N)`.
    pub a: Tensor,
    pub ln: Affine,
    /// `D_in -> 2C` gate logits, `[rgb | ir]`.
    pub out_proj: ConvWeights,
}

impl CeiWeights {
    pub fn init(cfg: &CeiConfig, init: &mut Init) -> Result<Self> {
        if cfg.channels == 0 || cfg.inner == 0 || cfg.pool.0 == 0 || cfg.pool.1 == 0 {
            return Err(Error::invalid("cei", format!("degenerate config {cfg:?}")));
        }
        let (c2, d, r, n) = (2 * cfg.channels, cfg.inner, cfg.rank, cfg.state);
        let mut delta_up = init.pointwise(d, r, false);
        delta_up.bias = Some(init.step_bias(d));
        Ok(Self {
            pool: cfg.pool,
            in_down: init.pointwise(r, c2, false),
            in_up: init.pointwise(2 * d, r, true),
            delta_down: init.pointwise(r, d, false),
            delta_up,
            bc_proj: init.pointwise(2 * n, d, false),
            a: state_matrix(d, n),
            ln: Affine::identity(d),
            out_proj: init.pointwise(c2, d, true),
        })
    }

    pub fn config(&self) -> CeiConfig {
        CeiConfig {
            channels: self.out_proj.out_channels() / 2,
            inner: self.ln.channels(),
            rank: self.in_down.out_channels(),
            state: self.a.shape().get(1).copied().unwrap_or(0),
            pool: self.pool,
        }
    }

    pub fn param_count(&self) -> usize {
        [
            &self.in_down,
            &self.in_up,
            &self.delta_down,
            &self.delta_up,
            &self.bc_proj,
            &self.out_proj,
        ]
        .iter()
        .map(|w| w.param_count())
        .sum::<usize>()
            + self.a.len()
            + self.ln.param_count()
    }
}

/// Per-channel gates `(W_rgb, W_ir)`, each `(B, C, 1, 1)` with entries in
/// `(0, 1)`.
pub fn cei_gates(pair: &ModalityPair, w: &CeiWeights) -> Result<(Tensor, Tensor)> {
    const OP: &str = "cei_forward";
    pair.validate()?;
    let (_, c, h, wd) = pair.rgb.dims4()?;
    if 2 * c != w.in_down.in_channels() {
        return Err(Error::invalid(
            OP,
            format!("{c} channels per modality, weights expect {}", w.in_down.in_channels() / 2),
        ));
    }
    let d = w.ln.channels();
    let n = w.a.shape()[1];
    let pool = Resample::AdaptiveAvgPool(w.pool.0.min(h), w.pool.1.min(wd));

    let z = resample(&concat_channels(&[&pair.rgb, &pair.ir])?, pool)?;
    let uz = conv2d(&conv2d(&z, &w.in_down)?, &w.in_up)?.map(silu);
    let u = uz.narrow_channels(0, d)?;
    let gate = uz.narrow_channels(d, d)?;
    let delta = conv2d(&conv2d(&u, &w.delta_down)?, &w.delta_up)?
        .map(|v| softplus(v).max(DELTA_FLOOR));
    let bc = conv2d(&u, &w.bc_proj)?;
    let (b_map, c_map) = (bc.narrow_channels(0, n)?, bc.narrow_channels(n, n)?);
    let scan = DirectionalScan {
        direction: Direction::HFwd,
        delta: &delta,
        a: &w.a,
        b: &b_map,
        c: &c_map,
    };
    let y = ss2d(&u, &[scan])?.mul(&gate)?;
    let logits = conv2d(&normalize(&y, NormKind::Layer, &w.ln, NORM_EPS)?, &w.out_proj)?;
    let g = global_avg_pool(&logits)?.map(sigmoid);
    Ok((g.narrow_channels(0, c)?, g.narrow_channels(c, c)?))
}

/// `F_m + W_m * F_m` for both modalities.
pub fn cei_forward(pair: &ModalityPair, w: &CeiWeights) -> Result<ModalityPair> {
    let (w_rgb, w_ir) = cei_gates(pair, w)?;
    let inject = |f: &Tensor, g: &Tensor| -> Result<Tensor> {
        f.add(&f.mul_channelwise(g)?)?.ensure_finite("cei_forward")
    };
    Ok(ModalityPair {
        rgb: inject(&pair.rgb, &w_rgb)?,
        ir: inject(&pair.ir, &w_ir)?,
        level: pair.level,
    })
}

impl Params for CeiWeights {
    fn export(&self, prefix: &str, s: &mut WeightStore) {
        let p = |n: &str| join(prefix, n);
        s.put_scalar(p("pool_h"), self.pool.0 as f64);
        s.put_scalar(p("pool_w"), self.pool.1 as f64);
        for (name, w) in [
            ("in_down", &self.in_down),
            ("in_up", &self.in_up),
            ("delta_down", &self.delta_down),
            ("delta_up", &self.delta_up),
            ("bc_proj", &self.bc_proj),
            ("out_proj", &self.out_proj),
        ] {
            s.put_conv(&p(name), w);
        }
        s.set(p("a"), self.a.clone());
        s.put_affine(&p("ln"), &self.ln);
    }

    fn import(prefix: &str, r: &mut StoreReader<'_>) -> Self {
        let p = |n: &str| join(prefix, n);
        Self {
            pool: (r.scalar(&p("pool_h")) as usize, r.scalar(&p("pool_w")) as usize),
            in_down: r.conv(&p("in_down"), 1),
            in_up: r.conv(&p("in_up"), 1),
            delta_down: r.conv(&p("delta_down"), 1),
            delta_up: r.conv(&p("delta_up"), 1),
            bc_proj: r.conv(&p("bc_proj"), 1),
            a: r.tensor(&p("a")),
            ln: r.affine(&p("ln")),
            out_proj: r.conv(&p("out_proj"), 1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::zero_conv;

    fn weights(c: usize, seed: u64) -> CeiWeights {
        CeiWeights::init(&CeiConfig::new(c).with_state(4), &mut Init::new(seed)).unwrap()
    }

    fn pair(c: usize, s: usize, seed: u64) -> ModalityPair {
        let mut init = Init::new(seed);
        ModalityPair::new(init.uniform(&[1, c, s, s], 2.0), init.uniform(&[1, c, s, s], 2.0), 3)
            .unwrap()
    }

    #[test]
    fn gates_in_open_unit_interval_and_magnitudes_grow() {
        let w = weights(6, 1);
        for seed in 0..5 {
            let p = pair(6, 16, seed);
            let (gr, gi) = cei_gates(&p, &w).unwrap();
            assert_eq!(gr.shape(), &[1, 6, 1, 1]);
            assert!(gr.data().iter().chain(gi.data()).all(|&g| g > 0.0 && g < 1.0));
            let out = cei_forward(&p, &w).unwrap();
            for (o, i) in out.rgb.data().iter().zip(p.rgb.data()) {
                assert!(o.abs() >= i.abs());
                assert!(o.signum() == i.signum() || *i == 0.0);
            }
        }
    }

    #[test]
    fn zero_logits_scale_by_one_and_a_half() {
        let mut w = weights(4, 2);
        w.out_proj = zero_conv(8, 8, 1, 1, true);
        let p = pair(4, 8, 3);
        let out = cei_forward(&p, &w).unwrap();
        assert_eq!(out.rgb, p.rgb.scale(1.5));
        assert_eq!(out.ir, p.ir.scale(1.5));
    }

    #[test]
    fn one_instance_accepts_several_resolutions() {
        let w = weights(4, 4);
        for s in [64, 32, 16, 4] {
            let out = cei_forward(&pair(4, s, 5), &w).unwrap();
            assert_eq!(out.rgb.shape(), &[1, 4, s, s]);
        }
    }

    #[test]
    fn rejects_mismatched_modalities() {
        let w = weights(4, 6);
        let bad = ModalityPair {
            rgb: Tensor::zeros(&[1, 4, 8, 8]),
            ir: Tensor::zeros(&[1, 3, 8, 8]),
            level: 3,
        };
        assert!(cei_forward(&bad, &w).is_err());
        assert!(cei_forward(&pair(5, 8, 0), &w).is_err());
    }

    #[test]
    fn output_width_is_twice_channels() {
        let w = weights(8, 0);
        assert_eq!(w.out_proj.out_channels(), 16);
        assert_eq!(w.config().inner, 16);
        assert_eq!(w.config().rank, LOW_RANK);
    }

    #[test]
    fn store_round_trip() {
        let w = weights(4, 7);
        assert_eq!(CeiWeights::from_store(&w.to_store()).unwrap(), w);
    }
}
