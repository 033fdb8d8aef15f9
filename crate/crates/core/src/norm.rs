use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    /// Over channels, independently at every `(b, h, w)`.
    Layer,
    /// Over `(C / groups, H, W)` blocks.
    Group(usize),
}

/// Per-channel scale and shift applied after normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl Affine {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

pub fn normalize(x: &Tensor, kind: NormKind, affine: &Affine, eps: f64) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if affine.gamma.shape() != [c] || affine.beta.shape() != [c] {
        return Err(Error::shape("normalize", x.shape(), affine.gamma.shape()));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid("normalize", "eps must be positive"));
    }
    let gamma = affine.gamma.data();
    let beta = affine.beta.data();
    let xs = x.data();
    let plane = h * w;
    let mut out = vec![0.0; xs.len()];

    match kind {
        NormKind::Layer => {
            let inv_c = 1.0 / c as f64;
            for bi in 0..b {
                let base = bi * c * plane;
                for p in 0..plane {
                    let at = |ch: usize| base + ch * plane + p;
                    let mean = (0..c).map(|ch| xs[at(ch)]).sum::<f64>() * inv_c;
                    let var = (0..c)
                        .map(|ch| {
                            let d = xs[at(ch)] - mean;
                            d * d
                        })
                        .sum::<f64>()
                        * inv_c;
                    let inv_std = 1.0 / libm::sqrt(var + eps);
                    for ch in 0..c {
                        out[at(ch)] = (xs[at(ch)] - mean) * inv_std * gamma[ch] + beta[ch];
                    }
                }
            }
        }
        NormKind::Group(groups) => {
            if groups == 0 || c % groups != 0 {
                return Err(Error::invalid(
                    "normalize",
                    format!("{groups} groups do not divide {c} channels"),
                ));
            }
            let cg = c / groups;
            let span = cg * plane;
            for bi in 0..b {
                for g in 0..groups {
                    let start = (bi * c + g * cg) * plane;
                    let block = &xs[start..start + span];
                    let mean = block.iter().sum::<f64>() / span as f64;
                    let var = block.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / span as f64;
                    let inv_std = 1.0 / libm::sqrt(var + eps);
                    for (i, v) in block.iter().enumerate() {
                        let ch = g * cg + i / plane;
                        out[start + i] = (v - mean) * inv_std * gamma[ch] + beta[ch];
                    }
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wavy(shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |i| libm::sin(i as f64 * 1.7) * 3.0 + 0.4)
    }

    #[test]
    fn standardized_input_is_a_fixed_point() {
        // Two channels at +-1 around zero: already mean 0 / variance 1 per position.
        let x = Tensor::from_fn(&[1, 2, 3, 3], |i| if i < 9 { 1.0 } else { -1.0 });
        let y = normalize(&x, NormKind::Layer, &Affine::identity(2), 1e-30).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-12);
        let g = normalize(&x, NormKind::Group(1), &Affine::identity(2), 1e-30).unwrap();
        assert!(g.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn constant_maps_to_zero() {
        let x = Tensor::full(&[2, 4, 3, 3], 7.25);
        for kind in [NormKind::Layer, NormKind::Group(2)] {
            let y = normalize(&x, kind, &Affine::identity(4), 1e-5).unwrap();
            assert!(y.max_abs() < 1e-10);
        }
    }

    #[test]
    fn affine_law() {
        let x = wavy(&[2, 4, 3, 5]);
        let affine = Affine {
            gamma: Tensor::full(&[4], 2.0),
            beta: Tensor::full(&[4], 1.0),
        };
        for kind in [NormKind::Layer, NormKind::Group(2), NormKind::Group(4)] {
            let plain = normalize(&x, kind, &Affine::identity(4), 1e-5).unwrap();
            let scaled = normalize(&x, kind, &affine, 1e-5).unwrap();
            let want = plain.map(|v| 2.0 * v + 1.0);
            assert!(scaled.max_abs_diff(&want) < 1e-10);
        }
    }

    #[test]
    fn group_statistics_are_standard() {
        let x = wavy(&[1, 6, 4, 4]);
        let y = normalize(&x, NormKind::Group(3), &Affine::identity(6), 1e-12).unwrap();
        for g in 0..3 {
            let block = &y.data()[g * 32..(g + 1) * 32];
            let mean = block.iter().sum::<f64>() / 32.0;
            let var = block.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn indivisible_groups_rejected() {
        let x = wavy(&[1, 6, 2, 2]);
        assert!(normalize(&x, NormKind::Group(4), &Affine::identity(6), 1e-5).is_err());
    }
}
