//! Unnormalized discrete Fourier transforms over `Complex64` buffers.
//!
//! Power-of-two lengths use an iterative radix-2 transform; other lengths
//! fall back to the direct `O(n^2)` sum, which is plenty for the map sizes
//! used here. Neither direction scales its output.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

pub use num_complex::Complex64;

fn twiddle(k: usize, n: usize, inverse: bool) -> Complex64 {
    let angle = 2.0 * PI * (k % n) as f64 / n as f64;
    let s = if inverse { 1.0 } else { -1.0 };
    Complex64::new(libm::cos(angle), s * libm::sin(angle))
}

/// In-place 1D transform: `X[k] = sum_j x[j] exp(-+2 pi i jk / n)`.
pub fn fft(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf, inverse);
    } else {
        let src = buf.to_vec();
        for (k, out) in buf.iter_mut().enumerate() {
            *out = src
                .iter()
                .enumerate()
                .map(|(j, &v)| v * twiddle(j * k, n, inverse))
                .sum();
        }
    }
}

fn radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let w: Vec<Complex64> = (0..half).map(|k| twiddle(k, len, inverse)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * w[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len *= 2;
    }
}

/// In-place 2D transform of a row-major `h x w` grid.
pub fn fft2(grid: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    assert_eq!(grid.len(), h * w, "grid length must equal h * w");
    for row in grid.chunks_mut(w) {
        fft(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        fft(&mut col, inverse);
        for y in 0..h {
            grid[y * w + x] = col[y];
        }
    }
}

/// Moves the zero frequency of each axis to index `n / 2`.
pub fn fftshift(grid: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            out[((y + h / 2) % h) * w + (x + w / 2) % w] = grid[y * w + x];
        }
    }
    out
}

/// Inverse of [`fftshift`].
pub fn ifftshift(grid: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = grid[((y + h / 2) % h) * w + (x + w / 2) % w];
        }
    }
    out
}
