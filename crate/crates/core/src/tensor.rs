use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major `f64` array of rank 1 to 4.
///
/// Image tensors use `(B, C, H, W)`; sequences use `(B, L, D)`. Every
/// operation returns a fresh value and leaves its inputs untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::invalid(
                "tensor",
                format!("rank must be 1..=4, got {}", shape.len()),
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(!shape.is_empty() && shape.len() <= 4, "rank must be 1..=4");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Builds a tensor from a function of the flat row-major index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        assert!(!shape.is_empty() && shape.len() <= 4, "rank must be 1..=4");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::invalid(
                "dims4",
                format!("expected a (B, C, H, W) tensor, got {:?}", self.shape),
            )),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::invalid(
                "dims3",
                format!("expected a rank-3 tensor, got {:?}", self.shape),
            )),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(Error::invalid(
                "dims2",
                format!("expected a rank-2 tensor, got {:?}", self.shape),
            )),
        }
    }

    /// Element at `(b, c, h, w)` of a rank-4 tensor.
    pub fn at4(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        let [_, cs, hs, ws] = self.shape[..] else {
            panic!("at4 on a rank-{} tensor", self.rank());
        };
        self.data[((b * cs + c) * hs + h) * ws + w]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// Multiplies each `(b, c)` plane by `gate[b, c, 0, 0]`.
    pub fn mul_channelwise(&self, gate: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = self.dims4()?;
        if gate.shape() != [b, c, 1, 1] {
            return Err(Error::shape("mul_channelwise", &self.shape, gate.shape()));
        }
        let plane = h * w;
        let mut data = self.data.clone();
        for (i, chunk) in data.chunks_mut(plane).enumerate() {
            let g = gate.data[i];
            chunk.iter_mut().for_each(|v| *v *= g);
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Channels `[start, start + len)` of a rank-4 tensor.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let (b, c, h, w) = self.dims4()?;
        if start + len > c {
            return Err(Error::invalid(
                "narrow_channels",
                format!("range {start}..{} exceeds {c} channels", start + len),
            ));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(b * len * plane);
        for bi in 0..b {
            let base = (bi * c + start) * plane;
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Ok(Tensor {
            shape: vec![b, len, h, w],
            data,
        })
    }

    /// Rows `[start, start + len)` of a rank-2 tensor.
    pub fn narrow_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        let (rows, cols) = self.dims2()?;
        if start + len > rows {
            return Err(Error::invalid(
                "narrow_rows",
                format!("range {start}..{} exceeds {rows} rows", start + len),
            ));
        }
        Ok(Tensor {
            shape: vec![len, cols],
            data: self.data[start * cols..(start + len) * cols].to_vec(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm_l2(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest elementwise absolute difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub(crate) fn ensure_finite(self, op: &'static str) -> Result<Tensor> {
        if self.all_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }
}

/// Concatenates rank-4 tensors along the channel axis, in argument order.
pub fn concat_channels(xs: &[&Tensor]) -> Result<Tensor> {
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?;
    let (b, _, h, w) = first.dims4()?;
    let mut total = 0;
    for x in xs {
        let (xb, xc, xh, xw) = x.dims4()?;
        if (xb, xh, xw) != (b, h, w) {
            return Err(Error::shape("concat_channels", first.shape(), x.shape()));
        }
        total += xc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(b * total * plane);
    for bi in 0..b {
        for x in xs {
            let c = x.shape[1];
            let base = bi * c * plane;
            data.extend_from_slice(&x.data[base..base + c * plane]);
        }
    }
    Ok(Tensor {
        shape: vec![b, total, h, w],
        data,
    })
}
