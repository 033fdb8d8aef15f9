//! Selective scans.
//!
//! [`ss1d_scan`] runs the diagonal recurrence
//!
//! ```text
//! h_t = exp(delta_t * A) * h_{t-1} + (delta_t * B_t) * u_t      h_0 = 0
//! y_t = <C_t, h_t>
//! ```
//!
//! independently for every `(batch, channel)` lane, with zero-order-hold
//! discretization of `A` and Euler discretization of `B`. [`ss1d_backward`]
//! is its adjoint, evaluated as a reverse-time scan over the stored states.

mod direction;
mod region;
mod ss2d;

pub use direction::{fold_direction, unfold_direction, Direction};
pub use region::{
    dense_ss2d_param_count, region_aware_ss2d, RegionSs2dConfig, RegionSs2dWeights,
    DELTA_FLOOR,
};
pub use ss2d::{ss2d, DirectionalScan};

use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The `(u, delta, A, B, C)` bundle driving one selective scan.
///
/// Shapes: `u`, `delta`: `(B, L, D)`; `a`: `(D, N)`; `b`, `c`: `(B, L, N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanInputs {
    pub u: Tensor,
    pub delta: Tensor,
    pub a: Tensor,
    pub b: Tensor,
    pub c: Tensor,
}

/// Gradients of a scalar loss with respect to every [`ScanInputs`] field.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGrads {
    pub u: Tensor,
    pub delta: Tensor,
    pub a: Tensor,
    pub b: Tensor,
    pub c: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub batch: usize,
    pub len: usize,
    pub channels: usize,
    pub state: usize,
}

impl ScanInputs {
    pub fn new(u: Tensor, delta: Tensor, a: Tensor, b: Tensor, c: Tensor) -> Result<Self> {
        let s = Self { u, delta, a, b, c };
        s.dims()?;
        Ok(s)
    }

    /// Checks every shape and the positivity of `delta`.
    pub fn dims(&self) -> Result<ScanDims> {
        const OP: &str = "ss1d_scan";
        let (batch, len, channels) = self.u.dims3()?;
        let (ad, state) = self.a.dims2()?;
        if self.delta.shape() != self.u.shape() {
            return Err(Error::shape(OP, self.u.shape(), self.delta.shape()));
        }
        if ad != channels {
            return Err(Error::shape(OP, self.u.shape(), self.a.shape()));
        }
        for m in [&self.b, &self.c] {
            if m.shape() != [batch, len, state] {
                return Err(Error::shape(OP, &[batch, len, state], m.shape()));
            }
        }
        if let Some((i, v)) = self
            .delta
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v <= 0.0)
        {
            return Err(Error::invalid(
                OP,
                format!("step size must be positive and finite, got {v} at flat index {i}"),
            ));
        }
        Ok(ScanDims {
            batch,
            len,
            channels,
            state,
        })
    }
}

/// Forward selective scan; returns `y` with the shape of `u`.
pub fn ss1d_scan(inputs: &ScanInputs) -> Result<Tensor> {
    let ScanDims {
        batch,
        len,
        channels: d,
        state: n,
    } = inputs.dims()?;
    let (u, dt, a) = (inputs.u.data(), inputs.delta.data(), inputs.a.data());
    let (bm, cm) = (inputs.b.data(), inputs.c.data());
    let mut y = vec![0.0; batch * len * d];
    let mut h = vec![0.0; d * n];
    for bi in 0..batch {
        h.fill(0.0);
        for t in 0..len {
            let row = (bi * len + t) * d;
            let bt = &bm[(bi * len + t) * n..][..n];
            let ct = &cm[(bi * len + t) * n..][..n];
            for ch in 0..d {
                let (step, drive) = (dt[row + ch], u[row + ch]);
                let hs = &mut h[ch * n..][..n];
                let ar = &a[ch * n..][..n];
                let mut acc = 0.0;
                for k in 0..n {
                    hs[k] = libm::exp(step * ar[k]) * hs[k] + step * bt[k] * drive;
                    acc += ct[k] * hs[k];
                }
                y[row + ch] = acc;
            }
        }
    }
    Tensor::new(inputs.u.shape().to_vec(), y)?.ensure_finite("ss1d_scan")
}

/// Adjoint of [`ss1d_scan`] for the cotangent `dy`.
pub fn ss1d_backward(inputs: &ScanInputs, dy: &Tensor) -> Result<ScanGrads> {
    let ScanDims {
        batch,
        len,
        channels: d,
        state: n,
    } = inputs.dims()?;
    if dy.shape() != inputs.u.shape() {
        return Err(Error::shape("ss1d_backward", inputs.u.shape(), dy.shape()));
    }
    let (u, dt, a) = (inputs.u.data(), inputs.delta.data(), inputs.a.data());
    let (bm, cm, g_out) = (inputs.b.data(), inputs.c.data(), dy.data());

    let mut du = vec![0.0; u.len()];
    let mut ddt = vec![0.0; u.len()];
    let mut da = vec![0.0; a.len()];
    let mut db = vec![0.0; bm.len()];
    let mut dc = vec![0.0; cm.len()];

    // states[t] holds h_t for the current batch row
    let mut states = vec![0.0; len * d * n];
    let mut carry = vec![0.0; d * n];
    for bi in 0..batch {
        let mut prev_off = None;
        for t in 0..len {
            let row = (bi * len + t) * d;
            let bt = &bm[(bi * len + t) * n..][..n];
            let cur = t * d * n;
            for ch in 0..d {
                let (step, drive) = (dt[row + ch], u[row + ch]);
                for k in 0..n {
                    let prev = prev_off.map_or(0.0, |p: usize| states[p + ch * n + k]);
                    states[cur + ch * n + k] =
                        libm::exp(step * a[ch * n + k]) * prev + step * bt[k] * drive;
                }
            }
            prev_off = Some(cur);
        }

        carry.fill(0.0);
        for t in (0..len).rev() {
            let row = (bi * len + t) * d;
            let brow = (bi * len + t) * n;
            let cur = t * d * n;
            for ch in 0..d {
                let (step, drive, g_y) = (dt[row + ch], u[row + ch], g_out[row + ch]);
                for k in 0..n {
                    let ak = a[ch * n + k];
                    let abar = libm::exp(step * ak);
                    let h_t = states[cur + ch * n + k];
                    let h_prev = if t == 0 {
                        0.0
                    } else {
                        states[cur - d * n + ch * n + k]
                    };
                    let g = g_y * cm[brow + k] + carry[ch * n + k];
                    dc[brow + k] += g_y * h_t;
                    let g_abar = g * h_prev;
                    ddt[row + ch] += g_abar * abar * ak + g * bm[brow + k] * drive;
                    da[ch * n + k] += g_abar * abar * step;
                    db[brow + k] += g * step * drive;
                    du[row + ch] += g * step * bm[brow + k];
                    carry[ch * n + k] = g * abar;
                }
            }
        }
    }

    Ok(ScanGrads {
        u: Tensor::new(inputs.u.shape().to_vec(), du)?,
        delta: Tensor::new(inputs.u.shape().to_vec(), ddt)?,
        a: Tensor::new(inputs.a.shape().to_vec(), da)?,
        b: Tensor::new(inputs.b.shape().to_vec(), db)?,
        c: Tensor::new(inputs.c.shape().to_vec(), dc)?,
    })
}
