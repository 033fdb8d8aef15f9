use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scan order over an `H x W` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    /// Row-major.
    HFwd,
    /// Row-major, reversed.
    HBwd,
    /// Column-major.
    VFwd,
    /// Column-major, reversed.
    VBwd,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::HFwd,
        Direction::HBwd,
        Direction::VFwd,
        Direction::VBwd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Direction::HFwd => "h_fwd",
            Direction::HBwd => "h_bwd",
            Direction::VFwd => "v_fwd",
            Direction::VBwd => "v_bwd",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == name)
    }

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    /// Flat `h * W + w` index of sequence position `t`.
    #[inline]
    pub fn position(self, t: usize, h: usize, w: usize) -> usize {
        let n = h * w;
        match self {
            Direction::HFwd => t,
            Direction::HBwd => n - 1 - t,
            Direction::VFwd => (t % h) * w + t / h,
            Direction::VBwd => {
                let s = n - 1 - t;
                (s % h) * w + s / h
            }
        }
    }
}

/// `(B, C, H, W)` -> `(B, H*W, C)` in the order given by `d`.
pub fn unfold_direction(x: &Tensor, d: Direction) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let n = h * w;
    let xs = x.data();
    let mut out = vec![0.0; b * n * c];
    for bi in 0..b {
        for t in 0..n {
            let p = d.position(t, h, w);
            let dst = &mut out[(bi * n + t) * c..][..c];
            for (ch, v) in dst.iter_mut().enumerate() {
                *v = xs[(bi * c + ch) * n + p];
            }
        }
    }
    Tensor::new(vec![b, n, c], out)
}

/// Inverse of [`unfold_direction`].
pub fn fold_direction(seq: &Tensor, d: Direction, h: usize, w: usize) -> Result<Tensor> {
    let (b, n, c) = seq.dims3()?;
    if n != h * w {
        return Err(Error::shape("fold_direction", seq.shape(), &[b, h * w, c]));
    }
    let ss = seq.data();
    let mut out = vec![0.0; b * c * n];
    for bi in 0..b {
        for t in 0..n {
            let p = d.position(t, h, w);
            let src = &ss[(bi * n + t) * c..][..c];
            for (ch, v) in src.iter().enumerate() {
                out[(bi * c + ch) * n + p] = *v;
            }
        }
    }
    Tensor::new(vec![b, c, h, w], out)
}
