use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fft::{fft2, fftshift, ifftshift, Complex64};
use crate::tensor::Tensor;

/// Largest imaginary residue tolerated after an inverse transform, relative
/// to `max(1, max |real part|)`.
pub const IMAG_RESIDUE_TOL: f64 = 1e-9;

/// Complex `(B, C, H, W)` grid in centered (shifted) frequency coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub shape: [usize; 4],
    pub data: Vec<Complex64>,
}

/// Low- and high-frequency parts of one centered spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumPair {
    pub low: Spectrum,
    pub high: Spectrum,
}

/// Low-frequency mask over centered coordinates: `1` where
/// `max(|u - H/2|, |v - W/2|) <= rho * H / 2`. The same radius is used on
/// both axes, so non-square maps get a square pass band.
pub fn low_frequency_mask(h: usize, w: usize, rho: f64) -> Tensor {
    let (ch, cw) = (h as f64 / 2.0, w as f64 / 2.0);
    let radius = rho * h as f64 / 2.0;
    Tensor::from_fn(&[h, w], |i| {
        let (u, v) = ((i / w) as f64, (i % w) as f64);
        if (u - ch).abs().max((v - cw).abs()) <= radius {
            1.0
        } else {
            0.0
        }
    })
}

/// Forward transform of every plane, center-shifted.
pub fn centered_spectrum(x: &Tensor) -> Result<Spectrum> {
    let (b, c, h, w) = x.dims4()?;
    let mut data = Vec::with_capacity(x.len());
    for plane in x.data().chunks(h * w) {
        let mut grid: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2(&mut grid, h, w, false);
        data.extend(fftshift(&grid, h, w));
    }
    if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite {
            op: "centered_spectrum",
        });
    }
    Ok(Spectrum {
        shape: [b, c, h, w],
        data,
    })
}

impl Spectrum {
    /// Inverse transform with `1/(HW)` scaling; returns the real part.
    ///
    /// Fails if the discarded imaginary part exceeds [`IMAG_RESIDUE_TOL`].
    pub fn to_spatial(&self) -> Result<Tensor> {
        let (residue, out) = self.to_spatial_with_residue()?;
        let scale = out.max_abs().max(1.0);
        if residue > IMAG_RESIDUE_TOL * scale {
            return Err(Error::invalid(
                "inverse_spectrum",
                format!("imaginary residue {residue:e} after inverse transform"),
            ));
        }
        Ok(out)
    }

    /// Inverse transform plus the largest absolute imaginary part discarded.
    pub fn to_spatial_with_residue(&self) -> Result<(f64, Tensor)> {
        let [_, _, h, w] = self.shape;
        let norm = 1.0 / (h * w) as f64;
        let mut residue: f64 = 0.0;
        let mut out = Vec::with_capacity(self.data.len());
        for plane in self.data.chunks(h * w) {
            let mut grid = ifftshift(plane, h, w);
            fft2(&mut grid, h, w, true);
            for z in grid {
                residue = residue.max((z.im * norm).abs());
                out.push(z.re * norm);
            }
        }
        let t = Tensor::new(self.shape.to_vec(), out)?.ensure_finite("inverse_spectrum")?;
        Ok((residue, t))
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Splits the centered spectrum of `x` into `low = S * M` and
/// `high = S * (1 - M)`.
pub fn frequency_split(x: &Tensor, rho: f64) -> Result<SpectrumPair> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(
            "frequency_split",
            format!("cutoff ratio {rho} outside [0, 1]"),
        ));
    }
    let full = centered_spectrum(x)?;
    let [_, _, h, w] = full.shape;
    let mask = low_frequency_mask(h, w, rho);
    let m = mask.data();
    let mut low = full.clone();
    let mut high = full;
    for (plane_lo, plane_hi) in low.data.chunks_mut(h * w).zip(high.data.chunks_mut(h * w)) {
        for i in 0..h * w {
            plane_lo[i] *= m[i];
            plane_hi[i] *= 1.0 - m[i];
        }
    }
    Ok(SpectrumPair { low, high })
}

/// Zero-pads the right/bottom edge up to even extents.
pub(crate) fn pad_to_even(x: &Tensor) -> Result<(Tensor, usize, usize)> {
    let (b, c, h, w) = x.dims4()?;
    let (h2, w2) = (h + h % 2, w + w % 2);
    if (h2, w2) == (h, w) {
        return Ok((x.clone(), h, w));
    }
    let mut out = alloc::vec![0.0; b * c * h2 * w2];
    for (p, src) in x.data().chunks(h * w).enumerate() {
        for y in 0..h {
            out[(p * h2 + y) * w2..][..w].copy_from_slice(&src[y * w..][..w]);
        }
    }
    Ok((Tensor::new(alloc::vec![b, c, h2, w2], out)?, h, w))
}

pub(crate) fn crop(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (b, c, h2, w2) = x.dims4()?;
    if (h2, w2) == (h, w) {
        return Ok(x.clone());
    }
    let mut out = Vec::with_capacity(b * c * h * w);
    for src in x.data().chunks(h2 * w2) {
        for y in 0..h {
            out.extend_from_slice(&src[y * w2..][..w]);
        }
    }
    Tensor::new(alloc::vec![b, c, h, w], out)
}

/// Spatial low/high reconstructions of `x` (before any encoding), with odd
/// extents handled by padding to even and cropping back.
pub fn frequency_bands(x: &Tensor, rho: f64) -> Result<(Tensor, Tensor)> {
    let (padded, h, w) = pad_to_even(x)?;
    let pair = frequency_split(&padded, rho)?;
    Ok((
        crop(&pair.low.to_spatial()?, h, w)?,
        crop(&pair.high.to_spatial()?, h, w)?,
    ))
}
