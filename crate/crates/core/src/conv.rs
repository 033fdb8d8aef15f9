//! Grouped 2D convolution with zero same-padding.

use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Kernel `(C_out, C_in / groups, k, k)`, optional bias `(C_out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights {
    pub kernel: Tensor,
    pub bias: Option<Tensor>,
    pub groups: usize,
    pub padding: usize,
}

impl ConvWeights {
    /// Validating constructor; padding defaults to `k / 2`.
    pub fn new(kernel: Tensor, bias: Option<Tensor>, groups: usize) -> Result<Self> {
        let padding = kernel.shape().get(2).map_or(0, |k| k / 2);
        let w = Self {
            kernel,
            bias,
            groups,
            padding,
        };
        w.validate()?;
        Ok(w)
    }

    /// 1x1 convolution from a `(C_out, C_in)` matrix.
    pub fn pointwise(matrix: &Tensor, bias: Option<Tensor>) -> Result<Self> {
        let (co, ci) = matrix.dims2()?;
        Self::new(matrix.reshape(&[co, ci, 1, 1])?, bias, 1)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape().get(1).copied().unwrap_or(0) * self.groups
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape().get(2).copied().unwrap_or(0)
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.out_channels() && self.groups == self.in_channels()
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (co, _, kh, kw) = self.kernel.dims4()?;
        if kh != kw || kh == 0 {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel must be square, got {:?}", self.kernel.shape()),
            ));
        }
        if self.groups == 0 || co % self.groups != 0 {
            return Err(Error::invalid(
                "conv2d",
                format!("groups {} must divide C_out {co}", self.groups),
            ));
        }
        if let Some(b) = &self.bias {
            if b.shape() != [co] {
                return Err(Error::shape("conv2d bias", b.shape(), &[co]));
            }
        }
        Ok(())
    }
}

/// Stride-1 convolution; output extents equal input extents.
pub fn conv2d(x: &Tensor, w: &ConvWeights) -> Result<Tensor> {
    conv2d_strided(x, w, 1)
}

/// Convolution with the given stride and the weights' zero padding.
pub fn conv2d_strided(x: &Tensor, w: &ConvWeights, stride: usize) -> Result<Tensor> {
    w.validate()?;
    let (b, ci, h, wd) = x.dims4()?;
    let (co, cig, k, _) = w.kernel.dims4()?;
    if ci != cig * w.groups {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: x.shape().to_vec(),
            right: w.kernel.shape().to_vec(),
        });
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be positive"));
    }
    let pad = w.padding;
    if h + 2 * pad < k || wd + 2 * pad < k {
        return Err(Error::invalid("conv2d", "kernel larger than padded input"));
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let cog = co / w.groups;
    let kern = w.kernel.data();
    let xs = x.data();
    let mut out = vec![0.0; b * co * ho * wo];

    for bi in 0..b {
        for oc in 0..co {
            let g = oc / cog;
            let dst = &mut out[(bi * co + oc) * ho * wo..][..ho * wo];
            if let Some(bias) = &w.bias {
                dst.fill(bias.data()[oc]);
            }
            for icg in 0..cig {
                let ic = g * cig + icg;
                let src = &xs[(bi * ci + ic) * h * wd..][..h * wd];
                let kbase = (oc * cig + icg) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let kv = kern[kbase + ky * k + kx];
                        if kv == 0.0 {
                            continue;
                        }
                        // valid output columns: 0 <= ox*stride + kx - pad < wd
                        let ox_lo = pad.saturating_sub(kx).div_ceil(stride);
                        let ox_hi = if wd + pad > kx {
                            ((wd + pad - kx - 1) / stride + 1).min(wo)
                        } else {
                            0
                        };
                        for oy in 0..ho {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &src[iy as usize * wd..][..wd];
                            let drow = &mut dst[oy * wo..][..wo];
                            for (ox, d) in drow.iter_mut().enumerate().take(ox_hi).skip(ox_lo) {
                                *d += kv * row[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, co, ho, wo], out)
}
