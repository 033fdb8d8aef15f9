use super::{fold_direction, ss1d_scan, unfold_direction, Direction, ScanInputs};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters for one scan direction, all laid out as spatial maps so the
/// same maps can be unfolded along any direction.
///
/// `delta`: `(B, D, H, W)`; `a`: `(D, N)`; `b`, `c`: `(B, N, H, W)`.
#[derive(Clone, Copy, Debug)]
pub struct DirectionalScan<'a> {
    pub direction: Direction,
    pub delta: &'a Tensor,
    pub a: &'a Tensor,
    pub b: &'a Tensor,
    pub c: &'a Tensor,
}

/// Runs one selective scan per direction over the unfolded map and sums the
/// responses after folding each back to `H x W`.
pub fn ss2d(x: &Tensor, scans: &[DirectionalScan<'_>]) -> Result<Tensor> {
    if scans.is_empty() {
        return Err(Error::invalid("ss2d", "empty direction set"));
    }
    let (_, _, h, w) = x.dims4()?;
    let mut acc: Option<Tensor> = None;
    for s in scans {
        if s.delta.shape() != x.shape() {
            return Err(Error::shape("ss2d", x.shape(), s.delta.shape()));
        }
        let inputs = ScanInputs::new(
            unfold_direction(x, s.direction)?,
            unfold_direction(s.delta, s.direction)?,
            s.a.clone(),
            unfold_direction(s.b, s.direction)?,
            unfold_direction(s.c, s.direction)?,
        )?;
        let y = fold_direction(&ss1d_scan(&inputs)?, s.direction, h, w)?;
        acc = Some(match acc {
            None => y,
            Some(prev) => prev.add(&y)?,
        });
    }
    Ok(acc.expect("at least one direction"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    struct Maps {
        delta: Tensor,
        a: Tensor,
        b: Tensor,
        c: Tensor,
    }

    fn prefix_maps(h: usize, w: usize) -> Maps {
        Maps {
            delta: Tensor::full(&[1, 1, h, w], 1.0),
            a: Tensor::zeros(&[1, 1]),
            b: Tensor::full(&[1, 1, h, w], 1.0),
            c: Tensor::full(&[1, 1, h, w], 1.0),
        }
    }

    fn scan<'a>(m: &'a Maps, d: Direction) -> DirectionalScan<'a> {
        DirectionalScan {
            direction: d,
            delta: &m.delta,
            a: &m.a,
            b: &m.b,
            c: &m.c,
        }
    }

    #[test]
    fn prefix_sum_along_each_direction() {
        let (h, w) = (3, 4);
        let x = Tensor::from_fn(&[1, 1, h, w], |i| (i as f64 + 1.0) * 0.5);
        let m = prefix_maps(h, w);
        for d in Direction::ALL {
            let y = ss2d(&x, &[scan(&m, d)]).unwrap();
            let mut running = 0.0;
            for t in 0..h * w {
                let p = d.position(t, h, w);
                running += x.data()[p];
                assert_eq!(y.data()[p], running, "{d:?} t={t}");
            }
        }
    }

    #[test]
    fn transposed_directions_agree_on_symmetric_input() {
        let n = 4;
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                v[i * n + j] = libm::sin((i + j) as f64) + (i * j) as f64 * 0.1;
            }
        }
        let x = Tensor::new(vec![1, 1, n, n], v).unwrap();
        let m = Maps {
            delta: Tensor::full(&[1, 1, n, n], 0.3),
            a: Tensor::full(&[1, 2], -0.5),
            b: Tensor::full(&[1, 2, n, n], 0.7),
            c: Tensor::full(&[1, 2, n, n], 1.1),
        };
        let yh = ss2d(&x, &[scan(&m, Direction::HFwd)]).unwrap();
        let yv = ss2d(&x, &[scan(&m, Direction::VFwd)]).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(yh.at4(0, 0, i, j), yv.at4(0, 0, j, i));
            }
        }
    }

    #[test]
    fn shape_preserved_and_empty_rejected() {
        let x = Tensor::from_fn(&[2, 1, 3, 5], |i| i as f64);
        let m = Maps {
            delta: Tensor::full(&[2, 1, 3, 5], 1.0),
            a: Tensor::zeros(&[1, 1]),
            b: Tensor::full(&[2, 1, 3, 5], 1.0),
            c: Tensor::full(&[2, 1, 3, 5], 1.0),
        };
        let all: vec::Vec<_> = Direction::ALL.iter().map(|&d| scan(&m, d)).collect();
        for k in 1..=4 {
            assert_eq!(ss2d(&x, &all[..k]).unwrap().shape(), x.shape());
        }
        assert!(ss2d(&x, &[]).is_err());
    }
}
