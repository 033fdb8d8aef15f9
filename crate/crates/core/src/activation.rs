use alloc::vec;

use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Sigmoid,
    /// Softmax across the channel axis at every `(b, h, w)`.
    SoftmaxChannels,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub fn activate(x: &Tensor, kind: Activation) -> Result<Tensor> {
    match kind {
        Activation::Silu => Ok(x.map(silu)),
        Activation::Sigmoid => Ok(x.map(sigmoid)),
        Activation::SoftmaxChannels => softmax_channels(x),
    }
}

fn softmax_channels(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let plane = h * w;
    let xs = x.data();
    let mut out = vec![0.0; xs.len()];
    for bi in 0..b {
        let base = bi * c * plane;
        for p in 0..plane {
            let at = |ch: usize| base + ch * plane + p;
            let max = (0..c).map(|ch| xs[at(ch)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for ch in 0..c {
                let e = libm::exp(xs[at(ch)] - max);
                out[at(ch)] = e;
                total += e;
            }
            for ch in 0..c {
                out[at(ch)] /= total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetry_point() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(silu(0.0), 0.0);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_uniform_on_zeros() {
        let x = Tensor::zeros(&[1, 3, 2, 2]);
        let y = activate(&x, Activation::SoftmaxChannels).unwrap();
        assert!(y.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn softmax_closed_form() {
        // exp(ln 2) : exp(0) : exp(0) = 2 : 1 : 1
        let x = Tensor::new(vec![1, 3, 1, 1], vec![core::f64::consts::LN_2, 0.0, 0.0]).unwrap();
        let y = activate(&x, Activation::SoftmaxChannels).unwrap();
        let want = [0.5, 0.25, 0.25];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn softplus_matches_definition() {
        for x in [-20.0, -1.0, 0.0, 0.5, 10.0] {
            let want = libm::log(1.0 + libm::exp(x));
            assert!((softplus(x) - want).abs() < 1e-12);
        }
        assert_eq!(softplus(100.0), 100.0);
    }
}
