//! Frequency-aware modality adapter.
//!
//! `F = X + Delta`, where `Delta` is a per-pixel convex combination of three
//! experts computed from the bottleneck `X~ = Conv1x1(LN(X))`:
//!
//! - spatial: averaged depthwise 3/5/7 responses mixed back with `X~`;
//! - low / high frequency: the centered spectrum of `X~` split by a square
//!   cutoff mask, reconstructed, depthwise-encoded and channel-reweighted.
//!
//! The mixing weights come from a 1x1 router on `X` followed by a softmax
//! over the three expert channels.

mod spectrum;

pub use spectrum::{
    centered_spectrum, frequency_bands, frequency_split, low_frequency_mask, Spectrum,
    SpectrumPair, IMAG_RESIDUE_TOL,
};

use alloc::format;
use alloc::vec;

use crate::activation::{activate, sigmoid, Activation};
use crate::conv::{conv2d, ConvWeights};
use crate::error::{Error, Result};
use crate::init::{zero_conv, Init};
use crate::norm::{normalize, Affine, NormKind};
use crate::resample::global_avg_pool;
use crate::store::{join, Params, StoreReader, WeightStore};
use crate::tensor::Tensor;
use crate::{ADAPTER_DIM, DEFAULT_RHO, NORM_EPS};

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterConfig {
    pub channels: usize,
    pub dim: usize,
    pub rho: f64,
}

impl AdapterConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            dim: ADAPTER_DIM,
            rho: DEFAULT_RHO,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterWeights {
    pub ln: Affine,
    pub down_proj: ConvWeights,
    pub dw3: ConvWeights,
    pub dw5: ConvWeights,
    pub dw7: ConvWeights,
    pub mix_proj: ConvWeights,
    pub spatial_out: ConvWeights,
    pub freq_dw_low: ConvWeights,
    pub freq_dw_high: ConvWeights,
    pub ca_low: ConvWeights,
    pub ca_high: ConvWeights,
    pub freq_out_low: ConvWeights,
    pub freq_out_high: ConvWeights,
    pub router: ConvWeights,
    pub rho: f64,
}

impl AdapterWeights {
    /// Expert output projections start at zero, so a fresh adapter is the
    /// identity map.
    pub fn init(cfg: &AdapterConfig, init: &mut Init) -> Result<Self> {
        let mut w = Self::init_active(cfg, init)?;
        w.zero_expert_outputs();
        Ok(w)
    }

    /// Like [`AdapterWeights::init`] but with random expert outputs.
    pub fn init_active(cfg: &AdapterConfig, init: &mut Init) -> Result<Self> {
        if !(cfg.rho > 0.0 && cfg.rho < 1.0) {
            return Err(Error::invalid(
                "adapter",
                format!("cutoff ratio {} outside (0, 1)", cfg.rho),
            ));
        }
        let (c, d) = (cfg.channels, cfg.dim);
        Ok(Self {
            ln: Affine::identity(c),
            down_proj: init.pointwise(d, c, true),
            dw3: init.depthwise(d, 3, true),
            dw5: init.depthwise(d, 5, true),
            dw7: init.depthwise(d, 7, true),
            mix_proj: init.pointwise(d, d, true),
            spatial_out: init.pointwise(c, d, true),
            freq_dw_low: init.depthwise(d, 3, true),
            freq_dw_high: init.depthwise(d, 3, true),
            ca_low: init.pointwise(d, d, true),
            ca_high: init.pointwise(d, d, true),
            freq_out_low: init.pointwise(c, d, true),
            freq_out_high: init.pointwise(c, d, true),
            router: init.pointwise(3, c, true),
            rho: cfg.rho,
        })
    }

    pub fn zero_expert_outputs(&mut self) {
        let (c, d) = (self.spatial_out.out_channels(), self.spatial_out.in_channels());
        self.spatial_out = zero_conv(c, d, 1, 1, true);
        self.freq_out_low = zero_conv(c, d, 1, 1, true);
        self.freq_out_high = zero_conv(c, d, 1, 1, true);
    }

    pub fn config(&self) -> AdapterConfig {
        AdapterConfig {
            channels: self.ln.channels(),
            dim: self.down_proj.out_channels(),
            rho: self.rho,
        }
    }

    pub fn router_channels(&self) -> usize {
        self.router.out_channels()
    }

    pub fn param_count(&self) -> usize {
        self.ln.param_count()
            + [
                &self.down_proj,
                &self.dw3,
                &self.dw5,
                &self.dw7,
                &self.mix_proj,
                &self.spatial_out,
                &self.freq_dw_low,
                &self.freq_dw_high,
                &self.ca_low,
                &self.ca_high,
                &self.freq_out_low,
                &self.freq_out_high,
                &self.router,
            ]
            .iter()
            .map(|w| w.param_count())
            .sum::<usize>()
    }
}

/// `X~ = Conv1x1(LN(X))`, with LN over channels at each position.
pub fn project_in(x: &Tensor, w: &AdapterWeights) -> Result<Tensor> {
    let normed = normalize(x, NormKind::Layer, &w.ln, NORM_EPS)?;
    conv2d(&normed, &w.down_proj)
}

/// Multi-kernel depthwise expert, projected back to the input width.
pub fn spatial_expert(xt: &Tensor, w: &AdapterWeights) -> Result<Tensor> {
    let avg = conv2d(xt, &w.dw3)?
        .add(&conv2d(xt, &w.dw5)?)?
        .add(&conv2d(xt, &w.dw7)?)?
        .scale(1.0 / 3.0);
    let mixed = avg.add(xt)?.add(&conv2d(&avg, &w.mix_proj)?)?;
    conv2d(&mixed, &w.spatial_out)
}

/// `sigma(Conv1x1(GAP(X))) * X`.
fn channel_attention(x: &Tensor, ca: &ConvWeights) -> Result<Tensor> {
    let gate = conv2d(&global_avg_pool(x)?, ca)?.map(sigmoid);
    x.mul_channelwise(&gate)
}

/// Low- and high-frequency expert outputs at the input width.
pub fn frequency_expert(xt: &Tensor, w: &AdapterWeights) -> Result<(Tensor, Tensor)> {
    let (low, high) = frequency_bands(xt, w.rho)?;
    let enc_low = conv2d(&low, &w.freq_dw_low)?;
    let enc_high = conv2d(&high, &w.freq_dw_high)?;
    Ok((
        conv2d(&channel_attention(&enc_low, &w.ca_low)?, &w.freq_out_low)?,
        conv2d(&channel_attention(&enc_high, &w.ca_high)?, &w.freq_out_high)?,
    ))
}

/// Per-pixel expert weights `(B, 3, H, W)`; they sum to one at every pixel.
pub fn router_weights(x: &Tensor, w: &AdapterWeights) -> Result<Tensor> {
    if w.router_channels() != 3 {
        return Err(Error::invalid(
            "router_fuse",
            format!("router produces {} channels, expected 3", w.router_channels()),
        ));
    }
    activate(&conv2d(x, &w.router)?, Activation::SoftmaxChannels)
}

/// Pixel-wise convex combination of `[spatial, low, high]`.
pub fn router_fuse(x: &Tensor, deltas: &[Tensor], w: &AdapterWeights) -> Result<Tensor> {
    if deltas.len() != 3 {
        return Err(Error::invalid(
            "router_fuse",
            format!("expected 3 expert outputs, got {}", deltas.len()),
        ));
    }
    for d in deltas {
        if d.shape() != x.shape() {
            return Err(Error::shape("router_fuse", x.shape(), d.shape()));
        }
    }
    let weights = router_weights(x, w)?;
    let (b, c, h, wd) = x.dims4()?;
    let plane = h * wd;
    let ws = weights.data();
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for ch in 0..c {
            for p in 0..plane {
                let i = (bi * c + ch) * plane + p;
                let wi = |e: usize| ws[(bi * 3 + e) * plane + p];
                out[i] = wi(0) * deltas[0].data()[i]
                    + wi(1) * deltas[1].data()[i]
                    + wi(2) * deltas[2].data()[i];
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// `F = X + router_fuse(X, [spatial, low, high])`.
pub fn adapter_forward(x: &Tensor, w: &AdapterWeights) -> Result<Tensor> {
    let xt = project_in(x, w)?;
    let spatial = spatial_expert(&xt, w)?;
    let (low, high) = frequency_expert(&xt, w)?;
    let delta = router_fuse(x, &[spatial, low, high], w)?;
    x.add(&delta)?.ensure_finite("adapter_forward")
}

impl Params for AdapterWeights {
    fn export(&self, prefix: &str, s: &mut WeightStore) {
        let p = |n: &str| join(prefix, n);
        s.put_affine(&p("ln"), &self.ln);
        for (name, w) in [
            ("down_proj", &self.down_proj),
            ("dw3", &self.dw3),
            ("dw5", &self.dw5),
            ("dw7", &self.dw7),
            ("mix_proj", &self.mix_proj),
            ("spatial_out", &self.spatial_out),
            ("freq_dw_low", &self.freq_dw_low),
            ("freq_dw_high", &self.freq_dw_high),
            ("ca_low", &self.ca_low),
            ("ca_high", &self.ca_high),
            ("freq_out_low", &self.freq_out_low),
            ("freq_out_high", &self.freq_out_high),
            ("router", &self.router),
        ] {
            s.put_conv(&p(name), w);
        }
        s.put_scalar(p("rho"), self.rho);
    }

    fn import(prefix: &str, r: &mut StoreReader<'_>) -> Self {
        let p = |n: &str| join(prefix, n);
        Self {
            ln: r.affine(&p("ln")),
            down_proj: r.conv(&p("down_proj"), 1),
            dw3: r.depthwise(&p("dw3")),
            dw5: r.depthwise(&p("dw5")),
            dw7: r.depthwise(&p("dw7")),
            mix_proj: r.conv(&p("mix_proj"), 1),
            spatial_out: r.conv(&p("spatial_out"), 1),
            freq_dw_low: r.depthwise(&p("freq_dw_low")),
            freq_dw_high: r.depthwise(&p("freq_dw_high")),
            ca_low: r.conv(&p("ca_low"), 1),
            ca_high: r.conv(&p("ca_high"), 1),
            freq_out_low: r.conv(&p("freq_out_low"), 1),
            freq_out_high: r.conv(&p("freq_out_high"), 1),
            router: r.conv(&p("router"), 1),
            rho: r.scalar(&p("rho")),
        }
    }
}
