//! Dual-granularity fusion encoder.
//!
//! Per pyramid level, [`cei_forward`] reweights both modalities' channels
//! with gates computed by a selective scan over their pooled concatenation.
//! [`mpf_forward`] then fuses the three levels along a top-down and a
//! bottom-up path, injecting completion features computed from a single
//! modality by a region-aware scan and a pooled gate.

mod attention;
mod cei;
mod completion;
mod mpf;

pub use attention::{
    attention_weights, deep_attention, sincos_position_encoding, AttentionConfig,
    AttentionWeights,
};
pub use cei::{cei_forward, cei_gates, CeiConfig, CeiWeights, CEI_POOL};
pub use completion::{completion_branch, completion_gate, CompletionWeights};
pub use mpf::{
    fuse_project, fusion_block, mpf_forward, CompletionSide, FusionBlock, Junction, MpfConfig,
    MpfWeights,
};

use alloc::format;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Both modalities' features at one pyramid level (3, 4 or 5, i.e. stride
/// 8, 16 or 32).
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityPair {
    pub rgb: Tensor,
    pub ir: Tensor,
    pub level: usize,
}

impl ModalityPair {
    pub fn new(rgb: Tensor, ir: Tensor, level: usize) -> Result<Self> {
        let p = Self { rgb, ir, level };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.rgb.dims4()?;
        if self.rgb.shape() != self.ir.shape() {
            return Err(Error::shape("modality_pair", self.rgb.shape(), self.ir.shape()));
        }
        if !(3..=5).contains(&self.level) {
            return Err(Error::invalid(
                "modality_pair",
                format!("level {} is not one of 3, 4, 5", self.level),
            ));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        1 << self.level
    }

    pub fn channels(&self) -> usize {
        self.rgb.shape()[1]
    }
}

/// Fused pyramid outputs, all of width `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidFeatures {
    /// Stride 8.
    pub p3: Tensor,
    /// Stride 16.
    pub n4: Tensor,
    /// Stride 32.
    pub n5: Tensor,
}

impl PyramidFeatures {
    pub fn levels(&self) -> [(&'static str, &Tensor); 3] {
        [("p3", &self.p3), ("n4", &self.n4), ("n5", &self.n5)]
    }
}
