//! Synthetic RGB/IR pairs with shared low-frequency structure.

use mmfuse_core::init::Init;
use mmfuse_core::pipeline::INPUT_MULTIPLE;
use mmfuse_core::Tensor;

#[derive(Debug, thiserror::Error)]
#[error("image size {0} is not a positive multiple of {INPUT_MULTIPLE}")]
pub struct SizeError(pub usize);

/// `(rgb (1,3,S,S), ir (1,1,S,S))` for a square size `S`.
///
/// Both modalities share a base pattern made of a few random low-frequency
/// waves. RGB adds per-channel gain, offset and noise; IR adds its own
/// noise and a handful of Gaussian hot spots that RGB does not see.
pub fn synth_pair(seed: u64, size: usize) -> Result<(Tensor, Tensor), SizeError> {
    if size == 0 || !size.is_multiple_of(INPUT_MULTIPLE) {
        return Err(SizeError(size));
    }
    let mut rng = Init::new(seed);
    let mut r = || rng.unit();
    let s = size as f64;
    let waves: Vec<[f64; 4]> = (0..4)
        .map(|_| {
            let fy = 1.0 + 2.0 * r();
            let fx = 1.0 + 2.0 * r();
            [fy, fx, 2.0 * std::f64::consts::PI * r(), 0.5 + r()]
        })
        .collect();
    let spots: Vec<[f64; 3]> = (0..3).map(|_| [r() * s, r() * s, s * (0.03 + 0.05 * r())]).collect();
    let gains: Vec<(f64, f64)> = (0..3).map(|_| (0.7 + 0.6 * r(), 0.2 * (r() - 0.5))).collect();

    let base: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 / s, (i % size) as f64 / s);
            waves
                .iter()
                .map(|[fy, fx, ph, amp]| amp * (2.0 * std::f64::consts::PI * (fy * y + fx * x) + ph).cos())
                .sum()
        })
        .collect();

    let mut noise = Init::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    let rgb_noise = noise.uniform(&[3, size, size], 0.3);
    let ir_noise = noise.uniform(&[size, size], 0.3);

    let rgb = Tensor::from_fn(&[1, 3, size, size], |i| {
        let (c, p) = (i / (size * size), i % (size * size));
        gains[c].0 * base[p] + gains[c].1 + rgb_noise.data()[i]
    });
    let ir = Tensor::from_fn(&[1, 1, size, size], |p| {
        let (y, x) = ((p / size) as f64, (p % size) as f64);
        let hot: f64 = spots
            .iter()
            .map(|[cy, cx, sd]| 1.5 * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * sd * sd)).exp())
            .sum();
        0.9 * base[p] + hot + ir_noise.data()[p]
    });
    Ok((rgb, ir))
}

/// Pearson correlation between the RGB channel-mean map and the IR map.
pub fn modality_correlation(rgb: &Tensor, ir: &Tensor) -> f64 {
    let plane = ir.len();
    let mean_map: Vec<f64> = (0..plane)
        .map(|p| (0..3).map(|c| rgb.data()[c * plane + p]).sum::<f64>() / 3.0)
        .collect();
    crate::stats::pearson(&mean_map, ir.data())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        assert_eq!(synth_pair(3, 64).unwrap(), synth_pair(3, 64).unwrap());
        assert_ne!(synth_pair(3, 64).unwrap().0, synth_pair(4, 64).unwrap().0);
    }

    #[test]
    fn modalities_correlate() {
        for seed in 0..10 {
            let (rgb, ir) = synth_pair(seed, 64).unwrap();
            assert!(modality_correlation(&rgb, &ir) > 0.2, "seed {seed}");
        }
    }

    #[test]
    fn size_must_be_multiple_of_32() {
        assert!(synth_pair(0, 48).is_err());
        assert!(synth_pair(0, 0).is_err());
        assert_eq!(synth_pair(0, 32).unwrap().1.shape(), &[1, 1, 32, 32]);
    }
}
