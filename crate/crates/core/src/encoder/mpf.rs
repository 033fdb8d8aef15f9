//! Bidirectional pyramid fusion with completion branches.
//!
//! ```text
//! f_l = Proj_l(Cat[rgb_l, ir_l])                 l = 3, 4, 5
//! f5' = Attn(f5)
//! P4 = A4(Cat[Up(f5'), f4, R(4)])
//! P3 = A3(Cat[Up(P4), f3, R(3)])
//! N4 = B4(Cat[Down(P3), P4, R(4)])
//! N5 = B5(Cat[Down(N4), f5', R(5)])
//! ```
//!
//! `R(l)` is the completion branch on the level-`l` modality features, gated
//! by the same-level fused map in the concatenation. It appears once per
//! enabled side, IR before RGB, always after the two fused inputs.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::attention::{deep_attention, AttentionConfig, AttentionWeights};
use super::completion::{completion_branch, CompletionWeights};
use super::{ModalityPair, PyramidFeatures};
use crate::activation::silu;
use crate::conv::{conv2d, conv2d_strided, ConvWeights};
use crate::error::{Error, Result};
use crate::init::Init;
use crate::resample::{resample, Resample};
use crate::store::{join, Params, StoreReader, WeightStore};
use crate::tensor::{concat_channels, Tensor};
use crate::STATE_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompletionSide {
    None,
    Ir,
    Rgb,
    Both,
}

impl CompletionSide {
    pub const ALL: [CompletionSide; 4] = [Self::None, Self::Ir, Self::Rgb, Self::Both];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Ir => "ir",
            Self::Rgb => "rgb",
            Self::Both => "both",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn has_ir(self) -> bool {
        matches!(self, Self::Ir | Self::Both)
    }

    pub fn has_rgb(self) -> bool {
        matches!(self, Self::Rgb | Self::Both)
    }

    pub fn branches(self) -> usize {
        self.has_ir() as usize + self.has_rgb() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpfConfig {
    /// Per-modality widths at levels 3, 4, 5.
    pub channels: [usize; 3],
    pub dim: usize,
    pub side: CompletionSide,
    pub state: usize,
    pub pos_scale: f64,
}

impl MpfConfig {
    pub fn new(channels: [usize; 3], dim: usize) -> Self {
        Self {
            channels,
            dim,
            side: CompletionSide::Ir,
            state: STATE_DIM,
            pos_scale: 1.0,
        }
    }

    pub fn with_side(mut self, side: CompletionSide) -> Self {
        self.side = side;
        self
    }

    pub fn with_state(mut self, state: usize) -> Self {
        self.state = state;
        self
    }
}

/// `z = SiLU(Conv1x1(x))`, `out = z + SiLU(Conv3x3(z))`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionBlock {
    pub reduce: ConvWeights,
    pub conv: ConvWeights,
}

impl FusionBlock {
    fn init(c_in: usize, d: usize, init: &mut Init) -> Self {
        Self {
            reduce: init.pointwise(d, c_in, true),
            conv: init.conv(d, d, 3, 1, true),
        }
    }
}

pub fn fusion_block(x: &Tensor, w: &FusionBlock) -> Result<Tensor> {
    let z = conv2d(x, &w.reduce)?.map(silu);
    z.add(&conv2d(&z, &w.conv)?.map(silu))
}

/// One fusion point of the pyramid and its completion branches.
#[derive(Clone, Debug, PartialEq)]
pub struct Junction {
    pub block: FusionBlock,
    pub ir: Option<CompletionWeights>,
    pub rgb: Option<CompletionWeights>,
}

impl Junction {
    fn init(channels: usize, cfg: &MpfConfig, init: &mut Init) -> Result<Self> {
        let d = cfg.dim;
        let block = FusionBlock::init((2 + cfg.side.branches()) * d, d, init);
        let mut branch = |on: bool| -> Result<Option<CompletionWeights>> {
            on.then(|| CompletionWeights::init(channels, d, cfg.state, init))
                .transpose()
        };
        Ok(Self {
            block,
            ir: branch(cfg.side.has_ir())?,
            rgb: branch(cfg.side.has_rgb())?,
        })
    }

    fn forward(&self, prev: &Tensor, same: &Tensor, pair: &ModalityPair) -> Result<Tensor> {
        let mut extra = Vec::new();
        if let Some(w) = &self.ir {
            extra.push(completion_branch(&pair.ir, same, w)?);
        }
        if let Some(w) = &self.rgb {
            extra.push(completion_branch(&pair.rgb, same, w)?);
        }
        let mut parts = alloc::vec![prev, same];
        parts.extend(extra.iter());
        fusion_block(&concat_channels(&parts)?, &self.block)
    }

    fn branches_mut(&mut self) -> impl Iterator<Item = &mut CompletionWeights> {
        self.ir.iter_mut().chain(self.rgb.iter_mut())
    }

    fn strip(&self, d: usize) -> Junction {
        let k = &self.block.reduce.kernel;
        let (co, ci, _, _) = k.dims4().expect("reduce kernel is rank 4");
        let kernel = Tensor::from_fn(&[co, 2 * d, 1, 1], |i| k.data()[(i / (2 * d)) * ci + i % (2 * d)]);
        Junction {
            block: FusionBlock {
                reduce: ConvWeights {
                    kernel,
                    ..self.block.reduce.clone()
                },
                conv: self.block.conv.clone(),
            },
            ir: None,
            rgb: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpfWeights {
    /// `2C_l -> d` at levels 3, 4, 5.
    pub fuse_proj: [ConvWeights; 3],
    pub attn: AttentionWeights,
    pub td4: Junction,
    pub td3: Junction,
    /// Stride-2 3x3 convolutions, `P3 -> /16` and `N4 -> /32`.
    pub down3: ConvWeights,
    pub down4: ConvWeights,
    pub bu4: Junction,
    pub bu5: Junction,
    pub side: CompletionSide,
}

impl MpfWeights {
    pub fn init(cfg: &MpfConfig, init: &mut Init) -> Result<Self> {
        let d = cfg.dim;
        if d == 0 || cfg.channels.contains(&0) {
            return Err(Error::invalid("mpf", format!("degenerate config {cfg:?}")));
        }
        let [c3, c4, c5] = cfg.channels;
        let fuse_proj = [
            init.pointwise(d, 2 * c3, true),
            init.pointwise(d, 2 * c4, true),
            init.pointwise(d, 2 * c5, true),
        ];
        let attn = AttentionWeights::init(
            &AttentionConfig {
                pos_scale: cfg.pos_scale,
                ..AttentionConfig::new(d)
            },
            init,
        )?;
        Ok(Self {
            fuse_proj,
            attn,
            td4: Junction::init(c4, cfg, init)?,
            td3: Junction::init(c3, cfg, init)?,
            down3: init.conv(d, d, 3, 1, true),
            down4: init.conv(d, d, 3, 1, true),
            bu4: Junction::init(c4, cfg, init)?,
            bu5: Junction::init(c5, cfg, init)?,
            side: cfg.side,
        })
    }

    pub fn dim(&self) -> usize {
        self.down3.out_channels()
    }

    pub fn config(&self) -> MpfConfig {
        MpfConfig {
            channels: core::array::from_fn(|i| self.fuse_proj[i].in_channels() / 2),
            dim: self.dim(),
            side: self.side,
            state: self
                .junctions()
                .iter()
                .find_map(|j| j.ir.as_ref().or(j.rgb.as_ref()))
                .map_or(STATE_DIM, |c| c.scan.config().state),
            pos_scale: self.attn.pos_scale,
        }
    }

    pub fn junctions(&self) -> [&Junction; 4] {
        [&self.td4, &self.td3, &self.bu4, &self.bu5]
    }

    /// Zeroes every completion branch's output convolution.
    pub fn zero_completion_outputs(&mut self) {
        for j in [&mut self.td4, &mut self.td3, &mut self.bu4, &mut self.bu5] {
            j.branches_mut().for_each(CompletionWeights::zero_output);
        }
    }

    /// The same weights without completion branches: the fusion blocks keep
    /// only the kernel columns acting on the two fused inputs.
    pub fn without_completion(&self) -> MpfWeights {
        let d = self.dim();
        MpfWeights {
            fuse_proj: self.fuse_proj.clone(),
            attn: self.attn.clone(),
            td4: self.td4.strip(d),
            td3: self.td3.strip(d),
            down3: self.down3.clone(),
            down4: self.down4.clone(),
            bu4: self.bu4.strip(d),
            bu5: self.bu5.strip(d),
            side: CompletionSide::None,
        }
    }

    pub fn param_count(&self) -> usize {
        let conv = |w: &ConvWeights| w.param_count();
        let junction = |j: &Junction| {
            conv(&j.block.reduce)
                + conv(&j.block.conv)
                + j.ir.iter().chain(j.rgb.iter()).map(|c| c.param_count()).sum::<usize>()
        };
        self.fuse_proj.iter().map(conv).sum::<usize>()
            + self.attn.param_count()
            + self.junctions().into_iter().map(junction).sum::<usize>()
            + conv(&self.down3)
            + conv(&self.down4)
    }
}

/// `Proj(Cat[rgb, ir])`.
pub fn fuse_project(pair: &ModalityPair, proj: &ConvWeights) -> Result<Tensor> {
    pair.validate()?;
    conv2d(&concat_channels(&[&pair.rgb, &pair.ir])?, proj)
}

fn check_levels(levels: &[ModalityPair]) -> Result<()> {
    if levels.len() != 3 {
        return Err(Error::invalid(
            "mpf_forward",
            format!("expected 3 pyramid levels, got {}", levels.len()),
        ));
    }
    for (i, p) in levels.iter().enumerate() {
        p.validate()?;
        if p.level != 3 + i {
            return Err(Error::invalid(
                "mpf_forward",
                format!("level {} at position {i}, expected {}", p.level, 3 + i),
            ));
        }
    }
    for pair in levels.windows(2) {
        let (_, _, h0, w0) = pair[0].rgb.dims4()?;
        let (_, _, h1, w1) = pair[1].rgb.dims4()?;
        if (h0, w0) != (2 * h1, 2 * w1) {
            return Err(Error::shape("mpf_forward", pair[0].rgb.shape(), pair[1].rgb.shape()));
        }
    }
    Ok(())
}

pub fn mpf_forward(levels: &[ModalityPair], w: &MpfWeights) -> Result<PyramidFeatures> {
    check_levels(levels)?;
    let f3 = fuse_project(&levels[0], &w.fuse_proj[0])?;
    let f4 = fuse_project(&levels[1], &w.fuse_proj[1])?;
    let f5 = deep_attention(&fuse_project(&levels[2], &w.fuse_proj[2])?, &w.attn)?;
    let up = |t: &Tensor| resample(t, Resample::UpsampleNearest2x);

    let p4 = w.td4.forward(&up(&f5)?, &f4, &levels[1])?;
    let p3 = w.td3.forward(&up(&p4)?, &f3, &levels[0])?;
    let n4 = w.bu4.forward(&conv2d_strided(&p3, &w.down3, 2)?, &p4, &levels[1])?;
    let n5 = w.bu5.forward(&conv2d_strided(&n4, &w.down4, 2)?, &f5, &levels[2])?;
    Ok(PyramidFeatures {
        p3: p3.ensure_finite("mpf_forward")?,
        n4: n4.ensure_finite("mpf_forward")?,
        n5: n5.ensure_finite("mpf_forward")?,
    })
}

fn export_junction(j: &Junction, prefix: &str, s: &mut WeightStore) {
    s.put_conv(&join(prefix, "reduce"), &j.block.reduce);
    s.put_conv(&join(prefix, "conv"), &j.block.conv);
    if let Some(c) = &j.ir {
        c.export(&join(prefix, "ir"), s);
    }
    if let Some(c) = &j.rgb {
        c.export(&join(prefix, "rgb"), s);
    }
}

fn import_junction(prefix: &str, side: CompletionSide, r: &mut StoreReader<'_>) -> Junction {
    Junction {
        block: FusionBlock {
            reduce: r.conv(&join(prefix, "reduce"), 1),
            conv: r.conv(&join(prefix, "conv"), 1),
        },
        ir: side
            .has_ir()
            .then(|| CompletionWeights::import(&join(prefix, "ir"), r)),
        rgb: side
            .has_rgb()
            .then(|| CompletionWeights::import(&join(prefix, "rgb"), r)),
    }
}

const JUNCTIONS: [&str; 4] = ["td4", "td3", "bu4", "bu5"];

impl Params for MpfWeights {
    fn export(&self, prefix: &str, s: &mut WeightStore) {
        let p = |n: &str| join(prefix, n);
        s.put_scalar(p("completion_side"), self.side.code() as f64);
        for (i, w) in self.fuse_proj.iter().enumerate() {
            s.put_conv(&p(&format!("fuse_proj.l{}", 3 + i)), w);
        }
        self.attn.export(&p("attn"), s);
        for (name, j) in JUNCTIONS.iter().zip(self.junctions()) {
            export_junction(j, &p(name), s);
        }
        s.put_conv(&p("down3"), &self.down3);
        s.put_conv(&p("down4"), &self.down4);
    }

    fn import(prefix: &str, r: &mut StoreReader<'_>) -> Self {
        let p = |n: &str| join(prefix, n);
        let side_name: String = p("completion_side");
        let side = CompletionSide::from_code(r.scalar(&side_name) as usize)
            .unwrap_or(CompletionSide::None);
        let fuse_proj = core::array::from_fn(|i| r.conv(&p(&format!("fuse_proj.l{}", 3 + i)), 1));
        let attn = AttentionWeights::import(&p("attn"), r);
        let [td4, td3, bu4, bu5] = JUNCTIONS.map(|n| import_junction(&p(n), side, r));
        Self {
            fuse_proj,
            attn,
            td4,
            td3,
            down3: r.conv(&p("down3"), 1),
            down4: r.conv(&p("down4"), 1),
            bu4,
            bu5,
            side,
        }
    }
}
