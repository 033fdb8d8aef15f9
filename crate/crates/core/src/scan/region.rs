//! Region-aware 2D selective scan.
//!
//! Local context first (`SiLU(DWConv3(GN(x)))`), then every scan parameter
//! is generated per position from that context by small projections:
//!
//! - driving signal, step size and output gate each through a rank-`r`
//!   pair of 1x1 maps (`C -> r -> C_inner`);
//! - `B` and `C` through a grouped bottleneck: the channels are split into
//!   independent groups, each reduced to rank `r` and expanded to its own
//!   `(B, C)` pair, and each group's channels scan with their group's pair.
//!
//! No weight depends on `H` or `W`, so one instance serves every pyramid
//! level.

use alloc::format;
use alloc::vec::Vec;

use super::{ss2d, Direction, DirectionalScan};
use crate::activation::{silu, softplus};
use crate::conv::{conv2d, ConvWeights};
use crate::error::{Error, Result};
use crate::init::{state_matrix, Init};
use crate::norm::{normalize, Affine, NormKind};
use crate::store::{codes_tensor, join, tensor_codes, Params, StoreReader, WeightStore};
use crate::tensor::{concat_channels, Tensor};
use crate::{CHANNEL_GROUPS, LOW_RANK, NORM_EPS, STATE_DIM};

/// Lower bound applied to every generated step size.
pub const DELTA_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct RegionSs2dConfig {
    pub channels: usize,
    pub inner: usize,
    pub out_channels: usize,
    pub rank: usize,
    pub state: usize,
    pub groups: usize,
    pub gn_groups: usize,
    pub directions: Vec<Direction>,
}

impl RegionSs2dConfig {
    /// Horizontal and vertical forward scans, `C_inner = C_out = C`.
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            inner: channels,
            out_channels: channels,
            rank: LOW_RANK,
            state: STATE_DIM,
            groups: CHANNEL_GROUPS,
            gn_groups: CHANNEL_GROUPS,
            directions: alloc::vec![Direction::HFwd, Direction::VFwd],
        }
    }

    pub fn with_out_channels(mut self, out: usize) -> Self {
        self.out_channels = out;
        self
    }

    pub fn with_directions(mut self, directions: &[Direction]) -> Self {
        self.directions = directions.to_vec();
        self
    }

    pub fn with_state(mut self, state: usize) -> Self {
        self.state = state;
        self
    }

    fn validate(&self) -> Result<()> {
        let g = self.groups;
        if g == 0
            || !self.channels.is_multiple_of(g)
            || !self.inner.is_multiple_of(g)
            || !self.out_channels.is_multiple_of(g)
            || !self.channels.is_multiple_of(self.gn_groups)
        {
            return Err(Error::invalid(
                "region_aware_ss2d",
                format!("channel widths {self:?} are not divisible by the group counts"),
            ));
        }
        if self.directions.is_empty() {
            return Err(Error::invalid("region_aware_ss2d", "empty direction set"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionSs2dWeights {
    pub gn: Affine,
    pub gn_groups: usize,
    pub dw3: ConvWeights,
    pub u_down: ConvWeights,
    pub u_up: ConvWeights,
    pub delta_down: ConvWeights,
    pub delta_up: ConvWeights,
    pub gate_down: ConvWeights,
    pub gate_up: ConvWeights,
    /// Grouped `C -> groups * r`.
    pub bc_down: ConvWeights,
    /// Grouped `groups * r -> groups * 2N`; each group's block is `[B | C]`.
    pub bc_up: ConvWeights,
    /// Per-direction `(C_inner, N)` state matrices.
    pub a: Vec<(Direction, Tensor)>,
    /// Grouped `C_inner -> C_out`.
    pub out_proj: ConvWeights,
}

impl RegionSs2dWeights {
    pub fn init(cfg: &RegionSs2dConfig, init: &mut Init) -> Result<Self> {
        cfg.validate()?;
        let (c, ci, r, n, g) = (cfg.channels, cfg.inner, cfg.rank, cfg.state, cfg.groups);
        let mut delta_up = init.pointwise(ci, r, false);
        delta_up.bias = Some(init.step_bias(ci));
        Ok(Self {
            gn: Affine::identity(c),
            gn_groups: cfg.gn_groups,
            dw3: init.depthwise(c, 3, true),
            u_down: init.pointwise(r, c, false),
            u_up: init.pointwise(ci, r, true),
            delta_down: init.pointwise(r, c, false),
            delta_up,
            gate_down: init.pointwise(r, c, false),
            gate_up: init.pointwise(ci, r, true),
            bc_down: init.conv(g * r, c, 1, g, true),
            bc_up: init.conv(g * 2 * n, g * r, 1, g, true),
            a: cfg
                .directions
                .iter()
                .map(|&d| (d, state_matrix(ci, n)))
                .collect(),
            out_proj: init.conv(cfg.out_channels, ci, 1, g, true),
        })
    }

    /// Configuration recovered from the tensor shapes.
    pub fn config(&self) -> RegionSs2dConfig {
        RegionSs2dConfig {
            channels: self.dw3.out_channels(),
            inner: self.u_up.out_channels(),
            out_channels: self.out_proj.out_channels(),
            rank: self.u_down.out_channels(),
            state: self.a.first().map_or(0, |(_, t)| t.shape()[1]),
            groups: self.bc_down.groups,
            gn_groups: self.gn_groups,
            directions: self.directions(),
        }
    }

    pub fn directions(&self) -> Vec<Direction> {
        self.a.iter().map(|(d, _)| *d).collect()
    }

    fn convs(&self) -> [&ConvWeights; 10] {
        [
            &self.dw3,
            &self.u_down,
            &self.u_up,
            &self.delta_down,
            &self.delta_up,
            &self.gate_down,
            &self.gate_up,
            &self.bc_down,
            &self.bc_up,
            &self.out_proj,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.gn.param_count()
            + self.convs().iter().map(|w| w.param_count()).sum::<usize>()
            + self.a.iter().map(|(_, t)| t.len()).sum::<usize>()
    }

    /// Weight count of the driving-signal pair (biases excluded).
    pub fn driving_projection_params(&self) -> usize {
        self.u_down.kernel.len() + self.u_up.kernel.len()
    }

    /// Zeroes every bias (normalization shift included).
    pub fn zero_biases(&mut self) {
        self.gn.beta = Tensor::zeros(self.gn.beta.shape());
        for w in [
            &mut self.dw3,
            &mut self.u_down,
            &mut self.u_up,
            &mut self.delta_down,
            &mut self.delta_up,
            &mut self.gate_down,
            &mut self.gate_up,
            &mut self.bc_down,
            &mut self.bc_up,
            &mut self.out_proj,
        ] {
            if let Some(b) = &mut w.bias {
                *b = Tensor::zeros(b.shape());
            }
        }
    }
}

/// Parameter count of a standard 2D scan block at the same widths, where
/// every generator is one dense `C x C_inner` map and `B`/`C` come from a
/// dense `C -> groups * 2N` map.
pub fn dense_ss2d_param_count(cfg: &RegionSs2dConfig) -> usize {
    let (c, ci, co, n) = (cfg.channels, cfg.inner, cfg.out_channels, cfg.state);
    let dense = |i: usize, o: usize| i * o + o;
    2 * c
        + 9 * c
        + c
        + 3 * dense(c, ci)
        + dense(c, cfg.groups * 2 * n)
        + cfg.directions.len() * ci * n
        + dense(ci, co)
}

pub fn region_aware_ss2d(x: &Tensor, w: &RegionSs2dWeights) -> Result<Tensor> {
    const OP: &str = "region_aware_ss2d";
    let (_, c, _, _) = x.dims4()?;
    if c % 2 != 0 {
        return Err(Error::invalid(OP, format!("channel count {c} is odd")));
    }
    let cfg = w.config();
    if c != cfg.channels {
        return Err(Error::shape(OP, x.shape(), w.dw3.kernel.shape()));
    }
    cfg.validate()?;
    let pair = |t: &Tensor, down: &ConvWeights, up: &ConvWeights| conv2d(&conv2d(t, down)?, up);

    let local = normalize(x, NormKind::Group(w.gn_groups), &w.gn, NORM_EPS)?;
    let ctx = conv2d(&local, &w.dw3)?.map(silu);
    let u = pair(&ctx, &w.u_down, &w.u_up)?;
    let delta = pair(&ctx, &w.delta_down, &w.delta_up)?.map(|v| softplus(v).max(DELTA_FLOOR));
    let gate = pair(&ctx, &w.gate_down, &w.gate_up)?.map(silu);
    let bc = pair(&ctx, &w.bc_down, &w.bc_up)?;

    let (n, cg) = (cfg.state, cfg.inner / cfg.groups);
    let mut parts = Vec::with_capacity(cfg.groups);
    for g in 0..cfg.groups {
        let u_g = u.narrow_channels(g * cg, cg)?;
        let delta_g = delta.narrow_channels(g * cg, cg)?;
        let b_g = bc.narrow_channels(g * 2 * n, n)?;
        let c_g = bc.narrow_channels(g * 2 * n + n, n)?;
        let a_g: Vec<Tensor> = w
            .a
            .iter()
            .map(|(_, a)| a.narrow_rows(g * cg, cg))
            .collect::<Result<_>>()?;
        let scans: Vec<DirectionalScan<'_>> = w
            .a
            .iter()
            .zip(&a_g)
            .map(|((d, _), a)| DirectionalScan {
                direction: *d,
                delta: &delta_g,
                a,
                b: &b_g,
                c: &c_g,
            })
            .collect();
        parts.push(ss2d(&u_g, &scans)?);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    let y = concat_channels(&refs)?.mul(&gate)?;
    conv2d(&y, &w.out_proj)?.ensure_finite(OP)
}

impl Params for RegionSs2dWeights {
    fn export(&self, prefix: &str, s: &mut WeightStore) {
        let p = |n: &str| join(prefix, n);
        s.put_affine(&p("gn"), &self.gn);
        s.put_scalar(p("gn_groups"), self.gn_groups as f64);
        s.put_conv(&p("dw3"), &self.dw3);
        s.put_conv(&p("u_down"), &self.u_down);
        s.put_conv(&p("u_up"), &self.u_up);
        s.put_conv(&p("delta_down"), &self.delta_down);
        s.put_conv(&p("delta_up"), &self.delta_up);
        s.put_conv(&p("gate_down"), &self.gate_down);
        s.put_conv(&p("gate_up"), &self.gate_up);
        s.put_conv(&p("bc_down"), &self.bc_down);
        s.put_conv(&p("bc_up"), &self.bc_up);
        s.put_scalar(p("groups"), self.bc_down.groups as f64);
        let codes: Vec<usize> = self.a.iter().map(|(d, _)| d.code()).collect();
        s.set(p("directions"), codes_tensor(&codes));
        for (d, a) in &self.a {
            s.set(join(&p("a"), d.name()), a.clone());
        }
        s.put_conv(&p("out_proj"), &self.out_proj);
    }

    fn import(prefix: &str, r: &mut StoreReader<'_>) -> Self {
        let p = |n: &str| join(prefix, n);
        let groups = (r.scalar(&p("groups")) as usize).max(1);
        let directions = tensor_codes(&r.tensor(&p("directions")));
        let a = directions
            .into_iter()
            .filter_map(Direction::from_code)
            .map(|d| (d, r.tensor(&join(&p("a"), d.name()))))
            .collect();
        Self {
            gn: r.affine(&p("gn")),
            gn_groups: (r.scalar(&p("gn_groups")) as usize).max(1),
            dw3: r.depthwise(&p("dw3")),
            u_down: r.conv(&p("u_down"), 1),
            u_up: r.conv(&p("u_up"), 1),
            delta_down: r.conv(&p("delta_down"), 1),
            delta_up: r.conv(&p("delta_up"), 1),
            gate_down: r.conv(&p("gate_down"), 1),
            gate_up: r.conv(&p("gate_up"), 1),
            bc_down: r.conv(&p("bc_down"), groups),
            bc_up: r.conv(&p("bc_up"), groups),
            a,
            out_proj: r.conv(&p("out_proj"), groups),
        }
    }
}
