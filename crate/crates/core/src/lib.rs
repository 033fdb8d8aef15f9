//! Dense-tensor kernels for RGB/infrared detection encoders.
//!
//! Everything here is pure computation over `f64` tensors in `(B, C, H, W)`
//! layout and builds without `std` (only `alloc` is required):
//!
//! - [`tensor`], [`conv`], [`norm`], [`activation`], [`resample`]: the value
//!   type and the primitives every other module composes.
//! - [`scan`]: the one-dimensional selective scan (forward and adjoint),
//!   directional 2D scanning and the region-aware 2D scan with grouped
//!   low-rank parameter generation.
//! - [`encoder`]: channel-gating interaction (CEI) and the bidirectional
//!   pyramid fusion with modality-completion branches (MPF).
//! - [`adapter`]: the frequency-aware modality adapter with spatial and
//!   spectral experts mixed by a pixel-wise router.
//! - [`pipeline`]: a small strided backbone wired to the adapters and the
//!   encoder, driven by a named [`store::WeightStore`].
#![no_std]

extern crate alloc;

pub mod activation;
pub mod adapter;
pub mod conv;
pub mod encoder;
pub mod error;
pub mod fft;
pub mod init;
pub mod norm;
pub mod pipeline;
pub mod resample;
pub mod scan;
pub mod store;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Rank of every low-rank projection pair.
pub const LOW_RANK: usize = 4;
/// Number of channel groups used for grouped parameter generation.
pub const CHANNEL_GROUPS: usize = 2;
/// Default state dimension of the selective scans.
pub const STATE_DIM: usize = 16;
/// Default adapter bottleneck width.
pub const ADAPTER_DIM: usize = 128;
/// Default low/high frequency cutoff ratio.
pub const DEFAULT_RHO: f64 = 0.5;
/// Default epsilon for every normalization.
pub const NORM_EPS: f64 = 1e-5;
