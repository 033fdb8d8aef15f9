//! Completion features from a single modality, gated by the fused map.

use crate::activation::sigmoid;
use crate::conv::{conv2d, ConvWeights};
use crate::error::{Error, Result};
use crate::init::{zero_conv, Init};
use crate::resample::global_avg_pool;
use crate::scan::{region_aware_ss2d, RegionSs2dConfig, RegionSs2dWeights};
use crate::store::{join, Params, StoreReader, WeightStore};
use crate::tensor::Tensor;

/// Region-aware scan from the modality width `C` to the fused width `d`,
/// followed by a depthwise 3x3 convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletionWeights {
    pub scan: RegionSs2dWeights,
    pub dw: ConvWeights,
}

impl CompletionWeights {
    pub fn init(channels: usize, d: usize, state: usize, init: &mut Init) -> Result<Self> {
        let cfg = RegionSs2dConfig::new(channels)
            .with_out_channels(d)
            .with_state(state);
        Ok(Self {
            scan: RegionSs2dWeights::init(&cfg, init)?,
            dw: init.depthwise(d, 3, true),
        })
    }

    /// Zeroes the depthwise output convolution, making the branch output
    /// exactly zero.
    pub fn zero_output(&mut self) {
        let d = self.dw.out_channels();
        self.dw = zero_conv(d, d, 3, d, true);
    }

    pub fn param_count(&self) -> usize {
        self.scan.param_count() + self.dw.param_count()
    }
}

/// `sigma(GAP(fuse))`, one value per `(batch, channel)`.
pub fn completion_gate(fuse: &Tensor) -> Result<Tensor> {
    Ok(global_avg_pool(fuse)?.map(sigmoid))
}

/// `sigma(GAP(fuse)) * DWConv(R-SS2D(feat))`.
pub fn completion_branch(feat: &Tensor, fuse: &Tensor, w: &CompletionWeights) -> Result<Tensor> {
    let (fb, _, fh, fw) = feat.dims4()?;
    let (gb, _, gh, gw) = fuse.dims4()?;
    if (fb, fh, fw) != (gb, gh, gw) {
        return Err(Error::shape("completion_branch", feat.shape(), fuse.shape()));
    }
    let enhanced = conv2d(&region_aware_ss2d(feat, &w.scan)?, &w.dw)?;
    enhanced.mul_channelwise(&completion_gate(fuse)?)
}

impl Params for CompletionWeights {
    fn export(&self, prefix: &str, s: &mut WeightStore) {
        self.scan.export(&join(prefix, "scan"), s);
        s.put_conv(&join(prefix, "dw"), &self.dw);
    }

    fn import(prefix: &str, r: &mut StoreReader<'_>) -> Self {
        Self {
            scan: RegionSs2dWeights::import(&join(prefix, "scan"), r),
            dw: r.depthwise(&join(prefix, "dw")),
        }
    }
}
