//! End-to-end encoder: toy strided backbone, per-modality adapters, CEI per
//! level and MPF.
//!
//! The convolutional trunk is shared by both modalities; each modality has
//! its own adapter after every stage, and the adapted map feeds that
//! modality's next stage. A one-channel IR image is replicated to three
//! channels before the stem.

use alloc::format;
use alloc::vec::Vec;

use crate::activation::silu;
use crate::adapter::{adapter_forward, AdapterConfig, AdapterWeights};
use crate::conv::{conv2d, conv2d_strided, ConvWeights};
use crate::encoder::{
    cei_forward, mpf_forward, CeiConfig, CeiWeights, CompletionSide, ModalityPair, MpfConfig,
    MpfWeights, PyramidFeatures,
};
use crate::error::{Error, Result};
use crate::init::Init;
use crate::store::{join, Params, StoreReader, WeightStore};
use crate::tensor::{concat_channels, Tensor};
use crate::{ADAPTER_DIM, DEFAULT_RHO, STATE_DIM};

/// Input extents must be multiples of the deepest stride.
pub const INPUT_MULTIPLE: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub stem: usize,
    pub stages: [usize; 3],
    pub dim: usize,
    pub adapter_dim: usize,
    pub rho: f64,
    pub state: usize,
    pub side: CompletionSide,
    pub share_cei: bool,
    pub pos_scale: f64,
    /// Random adapter output projections instead of zeros.
    pub active_adapters: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            stem: 16,
            stages: [32, 64, 128],
            dim: 128,
            adapter_dim: ADAPTER_DIM,
            rho: DEFAULT_RHO,
            state: STATE_DIM,
            side: CompletionSide::Ir,
            share_cei: false,
            pos_scale: 1.0,
            active_adapters: false,
        }
    }
}

impl EncoderConfig {
    /// Narrow widths for fixtures and quick checks.
    pub fn small() -> Self {
        Self {
            stem: 8,
            stages: [8, 12, 16],
            dim: 16,
            adapter_dim: 8,
            state: 4,
            active_adapters: true,
            ..Self::default()
        }
    }
}

/// `conv -> SiLU -> conv -> SiLU -> stride-2 conv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub conv1: ConvWeights,
    pub conv2: ConvWeights,
    pub down: ConvWeights,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    /// Two stride-2 3x3 convolutions with SiLU: `/4`.
    pub stem: [ConvWeights; 2],
    /// Outputs at strides 8, 16, 32.
    pub stages: [Stage; 3],
}

impl Backbone {
    fn init(cfg: &EncoderConfig, init: &mut Init) -> Self {
        let s = cfg.stem;
        let stem = [init.conv(s, 3, 3, 1, true), init.conv(s, s, 3, 1, true)];
        let mut prev = s;
        let stages = cfg.stages.map(|w| {
            let st = Stage {
                conv1: init.conv(w, prev, 3, 1, true),
                conv2: init.conv(w, w, 3, 1, true),
                down: init.conv(w, w, 3, 1, true),
            };
            prev = w;
            st
        });
        Self { stem, stages }
    }

    pub fn stem_forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv2d_strided(x, &self.stem[0], 2)?.map(silu);
        Ok(conv2d_strided(&y, &self.stem[1], 2)?.map(silu))
    }

    pub fn stage_forward(&self, i: usize, x: &Tensor) -> Result<Tensor> {
        let st = &self.stages[i];
        let y = conv2d(x, &st.conv1)?.map(silu);
        let y = conv2d(&y, &st.conv2)?.map(silu);
        conv2d_strided(&y, &st.down, 2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    pub backbone: Backbone,
    pub adapters_rgb: [AdapterWeights; 3],
    pub adapters_ir: [AdapterWeights; 3],
    /// Three per-level instances, or one shared instance.
    pub cei: Vec<CeiWeights>,
    pub mpf: MpfWeights,
}

impl EncoderWeights {
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        if cfg.share_cei && cfg.stages.iter().any(|&w| w != cfg.stages[0]) {
            return Err(Error::invalid(
                "encoder",
                format!("a shared CEI needs equal stage widths, got {:?}", cfg.stages),
            ));
        }
        let mut init = Init::new(seed);
        let backbone = Backbone::init(cfg, &mut init);
        let mut adapter = |c: usize| {
            let acfg = AdapterConfig::new(c)
                .with_dim(cfg.adapter_dim)
                .with_rho(cfg.rho);
            if cfg.active_adapters {
                AdapterWeights::init_active(&acfg, &mut init)
            } else {
                AdapterWeights::init(&acfg, &mut init)
            }
        };
        let [a0, a1, a2] = cfg.stages;
        let adapters_rgb = [adapter(a0)?, adapter(a1)?, adapter(a2)?];
        let adapters_ir = [adapter(a0)?, adapter(a1)?, adapter(a2)?];
        let n_cei = if cfg.share_cei { 1 } else { 3 };
        let cei = cfg.stages[..n_cei]
            .iter()
            .map(|&c| CeiWeights::init(&CeiConfig::new(c).with_state(cfg.state), &mut init))
            .collect::<Result<_>>()?;
        let mpf_cfg = MpfConfig {
            pos_scale: cfg.pos_scale,
            ..MpfConfig::new(cfg.stages, cfg.dim)
                .with_side(cfg.side)
                .with_state(cfg.state)
        };
        Ok(Self {
            backbone,
            adapters_rgb,
            adapters_ir,
            cei,
            mpf: MpfWeights::init(&mpf_cfg, &mut init)?,
        })
    }

    pub fn cei_for_level(&self, i: usize) -> &CeiWeights {
        &self.cei[i.min(self.cei.len() - 1)]
    }

    /// Zeroes every adapter's expert output projections.
    pub fn zero_adapter_outputs(&mut self) {
        for a in self.adapters_rgb.iter_mut().chain(self.adapters_ir.iter_mut()) {
            a.zero_expert_outputs();
        }
    }

    pub fn param_count(&self) -> usize {
        self.to_store().param_count()
    }

    /// Backbone features per modality, with or without the adapters.
    pub fn backbone_levels(
        &self,
        rgb: &Tensor,
        ir: &Tensor,
        use_adapters: bool,
    ) -> Result<[ModalityPair; 3]> {
        let (rgb3, ir3) = check_inputs(rgb, ir)?;
        let mut xr = self.backbone.stem_forward(&rgb3)?;
        let mut xi = self.backbone.stem_forward(&ir3)?;
        let mut out = Vec::with_capacity(3);
        for i in 0..3 {
            xr = self.backbone.stage_forward(i, &xr)?;
            xi = self.backbone.stage_forward(i, &xi)?;
            if use_adapters {
                xr = adapter_forward(&xr, &self.adapters_rgb[i])?;
                xi = adapter_forward(&xi, &self.adapters_ir[i])?;
            }
            out.push(ModalityPair::new(xr.clone(), xi.clone(), 3 + i)?);
        }
        let [l3, l4, l5]: [ModalityPair; 3] = out.try_into().expect("three levels");
        Ok([l3, l4, l5])
    }

    pub fn forward(&self, rgb: &Tensor, ir: &Tensor) -> Result<PyramidFeatures> {
        self.forward_with(rgb, ir, true)
    }

    pub fn forward_with(
        &self,
        rgb: &Tensor,
        ir: &Tensor,
        use_adapters: bool,
    ) -> Result<PyramidFeatures> {
        let levels = self.backbone_levels(rgb, ir, use_adapters)?;
        let enhanced = levels
            .iter()
            .enumerate()
            .map(|(i, p)| cei_forward(p, self.cei_for_level(i)))
            .collect::<Result<Vec<_>>>()?;
        mpf_forward(&enhanced, &self.mpf)
    }
}

fn check_inputs(rgb: &Tensor, ir: &Tensor) -> Result<(Tensor, Tensor)> {
    const OP: &str = "encoder_forward";
    let (b, c, h, w) = rgb.dims4()?;
    let (ib, ic, ih, iw) = ir.dims4()?;
    if c != 3 || (ib, ih, iw) != (b, h, w) || !(ic == 1 || ic == 3) {
        return Err(Error::shape(OP, rgb.shape(), ir.shape()));
    }
    if h == 0 || w == 0 || h % INPUT_MULTIPLE != 0 || w % INPUT_MULTIPLE != 0 {
        return Err(Error::invalid(
            OP,
            format!("input {h}x{w} is not a multiple of {INPUT_MULTIPLE}"),
        ));
    }
    let ir3 = if ic == 1 {
        concat_channels(&[ir, ir, ir])?
    } else {
        ir.clone()
    };
    Ok((rgb.clone(), ir3))
}

/// Loads every weight from `store` (reporting all missing names at once)
/// and runs the full encoder.
pub fn encoder_forward(rgb: &Tensor, ir: &Tensor, store: &WeightStore) -> Result<PyramidFeatures> {
    EncoderWeights::from_store(store)?.forward(rgb, ir)
}

impl Params for Stage {
    fn export(&self, prefix: &str, s: &mut WeightStore) {
        s.put_conv(&join(prefix, "conv1"), &self.conv1);
        s.put_conv(&join(prefix, "conv2"), &self.conv2);
        s.put_conv(&join(prefix, "down"), &self.down);
    }

    fn import(prefix: &str, r: &mut StoreReader<'_>) -> Self {
        Self {
            conv1: r.conv(&join(prefix, "conv1"), 1),
            conv2: r.conv(&join(prefix, "conv2"), 1),
            down: r.conv(&join(prefix, "down"), 1),
        }
    }
}

impl Params for EncoderWeights {
    fn export(&self, prefix: &str, s: &mut WeightStore) {
        let p = |n: &str| join(prefix, n);
        for (i, w) in self.backbone.stem.iter().enumerate() {
            s.put_conv(&p(&format!("backbone.stem{i}")), w);
        }
        for (i, st) in self.backbone.stages.iter().enumerate() {
            st.export(&p(&format!("backbone.stage{}", i + 1)), s);
        }
        for i in 0..3 {
            self.adapters_rgb[i].export(&p(&format!("adapter.rgb.stage{}", i + 1)), s);
            self.adapters_ir[i].export(&p(&format!("adapter.ir.stage{}", i + 1)), s);
        }
        s.put_scalar(p("cei_shared"), (self.cei.len() == 1) as u8 as f64);
        if self.cei.len() == 1 {
            self.cei[0].export(&p("cei.shared"), s);
        } else {
            for (i, c) in self.cei.iter().enumerate() {
                c.export(&p(&format!("cei.l{}", 3 + i)), s);
            }
        }
        self.mpf.export(&p("mpf"), s);
    }

    fn import(prefix: &str, r: &mut StoreReader<'_>) -> Self {
        let p = |n: &str| join(prefix, n);
        let stem = core::array::from_fn(|i| r.conv(&p(&format!("backbone.stem{i}")), 1));
        let stages = core::array::from_fn(|i| Stage::import(&p(&format!("backbone.stage{}", i + 1)), r));
        let adapters_rgb =
            core::array::from_fn(|i| AdapterWeights::import(&p(&format!("adapter.rgb.stage{}", i + 1)), r));
        let adapters_ir =
            core::array::from_fn(|i| AdapterWeights::import(&p(&format!("adapter.ir.stage{}", i + 1)), r));
        let cei = if r.scalar(&p("cei_shared")) == 1.0 {
            alloc::vec![CeiWeights::import(&p("cei.shared"), r)]
        } else {
            (3..=5)
                .map(|l| CeiWeights::import(&p(&format!("cei.l{l}")), r))
                .collect()
        };
        Self {
            backbone: Backbone { stem, stages },
            adapters_rgb,
            adapters_ir,
            cei,
            mpf: MpfWeights::import(&p("mpf"), r),
        }
    }
}
