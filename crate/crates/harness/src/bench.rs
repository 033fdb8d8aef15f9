//! Wall-clock scaling of the selective scan against dense self-attention.

use std::hint::black_box;
use std::time::Instant;

use mmfuse_core::init::{state_matrix, Init};
use mmfuse_core::scan::{ss1d_scan, ScanInputs};
use serde::Serialize;

use crate::stats::median;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchOp {
    Ss1d,
    Attn,
}

impl BenchOp {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ss1d => "ss1d",
            Self::Attn => "attn",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub op: BenchOp,
    pub length: usize,
    /// Median seconds per call.
    pub median_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Ratio {
    pub op: BenchOp,
    pub from: usize,
    pub to: usize,
    pub ratio: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    pub ratios: Vec<Ratio>,
}

impl BenchTable {
    pub fn ratio(&self, op: BenchOp, from: usize, to: usize) -> Option<f64> {
        self.ratios.iter().find(|r| r.op == op && r.from == from && r.to == to).map(|r| r.ratio)
    }

    pub fn render(&self) -> String {
        let mut s = String::from("op     length   median_ms\n");
        for r in &self.rows {
            s += &format!("{:<6} {:>6} {:>11.4}\n", r.op.name(), r.length, r.median_s * 1e3);
        }
        for r in &self.ratios {
            s += &format!("{} {}->{}: x{:.3}\n", r.op.name(), r.from, r.to, r.ratio);
        }
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("lengths must be non-empty, positive and strictly ascending")]
    Lengths,
    #[error("channels and repeats must be positive")]
    Zero,
}

/// Scan problem with `D = channels` and a 16-dimensional state.
pub fn scan_problem(length: usize, channels: usize, seed: u64) -> ScanInputs {
    let mut init = Init::new(seed);
    ScanInputs::new(
        init.uniform(&[1, length, channels], 1.0),
        init.uniform(&[1, length, channels], 0.05).map(|v| v + 0.1),
        state_matrix(channels, 16),
        init.uniform(&[1, length, 16], 1.0),
        init.uniform(&[1, length, 16], 1.0),
    )
    .expect("benchmark shapes")
}

/// Single-head softmax attention with `q = k = v = x` for `x: (L, C)`,
/// streamed one query row at a time so memory stays `O(L)`.
pub fn naive_attention(x: &[f64], length: usize, channels: usize) -> Vec<f64> {
    let scale = 1.0 / (channels as f64).sqrt();
    let mut out = vec![0.0; length * channels];
    let mut scores = vec![0.0; length];
    for i in 0..length {
        let q = &x[i * channels..(i + 1) * channels];
        let mut peak = f64::NEG_INFINITY;
        for (j, s) in scores.iter_mut().enumerate() {
            let k = &x[j * channels..(j + 1) * channels];
            *s = scale * q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>();
            peak = peak.max(*s);
        }
        let mut total = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - peak).exp();
            total += *s;
        }
        let row = &mut out[i * channels..(i + 1) * channels];
        for (j, s) in scores.iter().enumerate() {
            let p = s / total;
            for (o, v) in row.iter_mut().zip(&x[j * channels..(j + 1) * channels]) {
                *o += p * v;
            }
        }
    }
    out
}

fn time_median(repeats: usize, mut f: impl FnMut()) -> f64 {
    f();
    let samples: Vec<f64> = (0..repeats)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .collect();
    median(&samples)
}

fn time_op(op: BenchOp, length: usize, channels: usize, repeats: usize) -> f64 {
    match op {
        BenchOp::Ss1d => {
            let p = scan_problem(length, channels, length as u64);
            time_median(repeats, || {
                black_box(ss1d_scan(black_box(&p)).expect("scan"));
            })
        }
        BenchOp::Attn => {
            let x = Init::new(length as u64).uniform(&[length, channels], 1.0);
            time_median(repeats, || {
                black_box(naive_attention(black_box(x.data()), length, channels));
            })
        }
    }
}

/// Median wall-clock per length for each op, plus ratios between
/// consecutive lengths. Runs on the calling thread.
pub fn bench_scan(
    ops: &[BenchOp],
    lengths: &[usize],
    channels: usize,
    repeats: usize,
) -> Result<BenchTable, BenchError> {
    if lengths.is_empty() || lengths[0] == 0 || lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::Lengths);
    }
    if channels == 0 || repeats == 0 {
        return Err(BenchError::Zero);
    }
    let mut table = BenchTable::default();
    for &op in ops {
        let times: Vec<f64> = lengths.iter().map(|&l| time_op(op, l, channels, repeats)).collect();
        for (&length, &median_s) in lengths.iter().zip(&times) {
            table.rows.push(BenchRow { op, length, median_s });
        }
        for (w, t) in lengths.windows(2).zip(times.windows(2)) {
            table.ratios.push(Ratio { op, from: w[0], to: w[1], ratio: t[1] / t[0] });
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_length_has_no_ratios() {
        let t = bench_scan(&[BenchOp::Ss1d, BenchOp::Attn], &[32], 4, 1).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.ratios.is_empty());
    }

    #[test]
    fn lengths_must_ascend() {
        assert!(bench_scan(&[BenchOp::Ss1d], &[64, 32], 4, 1).is_err());
        assert!(bench_scan(&[BenchOp::Ss1d], &[], 4, 1).is_err());
        assert!(bench_scan(&[BenchOp::Ss1d], &[8], 4, 0).is_err());
    }

    #[test]
    fn attention_of_identical_tokens_is_identity() {
        let x: Vec<f64> = (0..5).flat_map(|_| [1.0, -2.0, 0.5]).collect();
        let y = naive_attention(&x, 5, 3);
        assert!(y.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
