use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    /// Averages over the cells of a regular `(h', w')` grid; cell `i` spans
    /// `[floor(i*H/h'), ceil((i+1)*H/h'))`.
    AdaptiveAvgPool(usize, usize),
    GlobalAvgPool,
    UpsampleNearest2x,
}

pub fn resample(x: &Tensor, kind: Resample) -> Result<Tensor> {
    match kind {
        Resample::AdaptiveAvgPool(th, tw) => adaptive_avg_pool(x, th, tw),
        Resample::GlobalAvgPool => adaptive_avg_pool(x, 1, 1),
        Resample::UpsampleNearest2x => upsample_nearest_2x(x),
    }
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    resample(x, Resample::GlobalAvgPool)
}

fn adaptive_avg_pool(x: &Tensor, th: usize, tw: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if th == 0 || tw == 0 || th > h || tw > w {
        return Err(Error::invalid(
            "adaptive_avg_pool",
            format!("target {th}x{tw} invalid for a {h}x{w} map"),
        ));
    }
    let xs = x.data();
    let mut out = vec![0.0; b * c * th * tw];
    for (plane_idx, src) in xs.chunks(h * w).enumerate() {
        for i in 0..th {
            let (y0, y1) = (i * h / th, ((i + 1) * h).div_ceil(th));
            for j in 0..tw {
                let (x0, x1) = (j * w / tw, ((j + 1) * w).div_ceil(tw));
                let mut acc = 0.0;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        acc += src[yy * w + xx];
                    }
                }
                out[(plane_idx * th + i) * tw + j] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    Tensor::new(vec![b, c, th, tw], out)
}

fn upsample_nearest_2x(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (h2, w2) = (2 * h, 2 * w);
    let xs = x.data();
    let mut out = vec![0.0; b * c * h2 * w2];
    for (plane_idx, src) in xs.chunks(h * w).enumerate() {
        let dst = &mut out[plane_idx * h2 * w2..][..h2 * w2];
        for y in 0..h2 {
            for xx in 0..w2 {
                dst[y * w2 + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new(vec![b, c, h2, w2], out)
}
