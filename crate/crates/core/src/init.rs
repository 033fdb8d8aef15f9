//! Seeded parameter initialization.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::ConvWeights;
use crate::tensor::Tensor;

/// Deterministic parameter source; the same seed always yields the same
/// sequence of tensors on every platform.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        Tensor::from_fn(shape, |_| self.rng.gen_range(-bound..=bound))
    }

    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform in `+-1/sqrt(fan_in)`.
    pub fn conv(
        &mut self,
        c_out: usize,
        c_in: usize,
        k: usize,
        groups: usize,
        bias: bool,
    ) -> ConvWeights {
        let cig = c_in / groups;
        let bound = 1.0 / libm::sqrt((cig * k * k) as f64);
        let kernel = self.uniform(&[c_out, cig, k, k], bound);
        let bias = bias.then(|| self.uniform(&[c_out], bound));
        ConvWeights::new(kernel, bias, groups).expect("initializer shapes are consistent")
    }

    pub fn pointwise(&mut self, c_out: usize, c_in: usize, bias: bool) -> ConvWeights {
        self.conv(c_out, c_in, 1, 1, bias)
    }

    pub fn depthwise(&mut self, channels: usize, k: usize, bias: bool) -> ConvWeights {
        self.conv(channels, channels, k, channels, bias)
    }

    /// Bias whose softplus lands log-uniformly in `[1e-3, 1e-1]`.
    pub fn step_bias(&mut self, channels: usize) -> Tensor {
        let (lo, hi) = (libm::log(1e-3), libm::log(1e-1));
        Tensor::from_fn(&[channels], |_| {
            let dt = libm::exp(lo + (hi - lo) * self.rng.gen::<f64>());
            // inverse softplus
            dt + libm::log(-libm::expm1(-dt))
        })
    }
}

/// All-zero convolution (kernel and bias).
pub fn zero_conv(c_out: usize, c_in: usize, k: usize, groups: usize, bias: bool) -> ConvWeights {
    ConvWeights::new(
        Tensor::zeros(&[c_out, c_in / groups, k, k]),
        bias.then(|| Tensor::zeros(&[c_out])),
        groups,
    )
    .expect("zero conv shapes are consistent")
}

/// Real diagonal state matrix with every row `-(1, 2, .., N)`.
pub fn state_matrix(channels: usize, state: usize) -> Tensor {
    let row: Vec<f64> = (1..=state).map(|k| -(k as f64)).collect();
    Tensor::from_fn(&[channels, state], |i| row[i % state])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::softplus;

    #[test]
    fn same_seed_same_tensors() {
        let a = Init::new(5).uniform(&[3, 4], 1.0);
        let b = Init::new(5).uniform(&[3, 4], 1.0);
        let c = Init::new(6).uniform(&[3, 4], 1.0);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn step_bias_lands_in_range() {
        let bias = Init::new(1).step_bias(64);
        for &v in bias.data() {
            let dt = softplus(v);
            assert!((1e-3 - 1e-12..=1e-1 + 1e-12).contains(&dt), "{dt}");
        }
    }

    #[test]
    fn state_matrix_rows() {
        let a = state_matrix(2, 3);
        assert_eq!(a.data(), &[-1.0, -2.0, -3.0, -1.0, -2.0, -3.0]);
    }
}
