use serde::{Deserialize, Serialize};

use super::Layer;
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    /// 3×3 window, stride 2, pad 1; padded taps never win.
    Max3x3s2,
    /// 3×3 window, stride 2, pad 1; divisor is always 9.
    Avg3x3s2,
    GlobalAvg,
}

impl PoolKind {
    pub fn output_shape(self, s: Shape4) -> Shape4 {
        match self {
            PoolKind::GlobalAvg => Shape4 { h: 1, w: 1, ..s },
            _ => Shape4 {
                h: (s.h - 1) / 2 + 1,
                w: (s.w - 1) / 2 + 1,
                ..s
            },
        }
    }
}

/// Window taps `(iy, ix)` of output pixel `(oy, ox)` that fall inside the input.
fn window(oy: usize, ox: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let (cy, cx) = (oy * 2, ox * 2);
    (0..3)
        .flat_map(move |ky| (0..3).map(move |kx| (ky, kx)))
        .filter_map(move |(ky, kx)| {
            let iy = (cy + ky).checked_sub(1)?;
            let ix = (cx + kx).checked_sub(1)?;
            (iy < h && ix < w).then_some((iy, ix))
        })
}

fn forward_impl(x: &Tensor, kind: PoolKind) -> (Tensor, Vec<usize>) {
    let s = x.shape();
    let os = kind.output_shape(s);
    let mut out = Tensor::zeros(os);
    let mut argmax = Vec::new();
    for n in 0..s.n {
        for c in 0..s.c {
            let xin = x.plane(n, c);
            match kind {
                PoolKind::GlobalAvg => {
                    out.plane_mut(n, c)[0] = xin.iter().sum::<f64>() / xin.len() as f64;
                }
                PoolKind::Max3x3s2 => {
                    for oy in 0..os.h {
                        for ox in 0..os.w {
                            let (mut best, mut at) = (f64::NEG_INFINITY, 0);
                            for (iy, ix) in window(oy, ox, s.h, s.w) {
                                let v = xin[iy * s.w + ix];
                                if v > best {
                                    best = v;
                                    at = iy * s.w + ix;
                                }
                            }
                            out.plane_mut(n, c)[oy * os.w + ox] = best;
                            argmax.push(at);
                        }
                    }
                }
                PoolKind::Avg3x3s2 => {
                    for oy in 0..os.h {
                        for ox in 0..os.w {
                            let sum: f64 = window(oy, ox, s.h, s.w).map(|(iy, ix)| xin[iy * s.w + ix]).sum();
                            out.plane_mut(n, c)[oy * os.w + ox] = sum / 9.0;
                        }
                    }
                }
            }
        }
    }
    (out, argmax)
}

pub fn pool(x: &Tensor, kind: PoolKind) -> Tensor {
    forward_impl(x, kind).0
}

#[derive(Debug, Clone)]
pub struct Pool {
    pub kind: PoolKind,
    cache: Option<(Shape4, Vec<usize>)>,
}

impl Pool {
    pub fn new(kind: PoolKind) -> Self {
        Pool { kind, cache: None }
    }
}

impl Layer for Pool {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (out, argmax) = forward_impl(x, self.kind);
        self.cache = Some((x.shape(), argmax));
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (s, argmax) = self.cache.as_ref().ok_or(Error::MissingForwardCache("pool"))?;
        let s = *s;
        let os = self.kind.output_shape(s);
        if grad_out.shape() != os {
            return Err(Error::ShapeMismatch {
                op: "pool backward",
                left: grad_out.shape(),
                right: os,
            });
        }
        let mut gx = Tensor::zeros(s);
        let mut idx = 0;
        for n in 0..s.n {
            for c in 0..s.c {
                let go = grad_out.plane(n, c);
                let gin = gx.plane_mut(n, c);
                match self.kind {
                    PoolKind::GlobalAvg => {
                        let share = go[0] / gin.len() as f64;
                        gin.iter_mut().for_each(|v| *v = share);
                    }
                    PoolKind::Max3x3s2 => {
                        for g in go {
                            gin[argmax[idx]] += g;
                            idx += 1;
                        }
                    }
                    PoolKind::Avg3x3s2 => {
                        for oy in 0..os.h {
                            for ox in 0..os.w {
                                let share = go[oy * os.w + ox] / 9.0;
                                for (iy, ix) in window(oy, ox, s.h, s.w) {
                                    gin[iy * s.w + ix] += share;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape4 {
        Shape4::new(n, c, h, w).unwrap()
    }

    #[test]
    fn global_avg_constant() {
        let out = pool(&Tensor::full(shape(2, 3, 4, 5), 5.0), PoolKind::GlobalAvg);
        assert_eq!(out.shape(), shape(2, 3, 1, 1));
        assert!(out.data().iter().all(|&v| (v - 5.0).abs() < 1e-15));
    }

    #[test]
    fn max_pool_matches_window_scan() {
        let s = shape(1, 1, 7, 6);
        let x = Tensor::from_fn(s, |_, _, h, w| {
            (h * 6 + w) as f64 + if (h + w) % 3 == 0 { 50.0 } else { 0.0 }
        });
        let out = pool(&x, PoolKind::Max3x3s2);
        assert_eq!(out.shape(), shape(1, 1, 4, 3));
        for oy in 0..4 {
            for ox in 0..3 {
                let mut best = f64::NEG_INFINITY;
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (iy, ix) = (oy as isize * 2 + dy, ox as isize * 2 + dx);
                        if iy >= 0 && ix >= 0 && iy < 7 && ix < 6 {
                            best = best.max(x.at(0, 0, iy as usize, ix as usize));
                        }
                    }
                }
                assert_eq!(out.at(0, 0, oy, ox), best);
            }
        }
    }

    #[test]
    fn avg_pool_counts_padding() {
        let out = pool(&Tensor::ones(shape(1, 1, 4, 4)), PoolKind::Avg3x3s2);
        assert_eq!(out.shape(), shape(1, 1, 2, 2));
        assert!((out.at(0, 0, 0, 0) - 4.0 / 9.0).abs() < 1e-15);
        assert!((out.at(0, 0, 1, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn halving_matches_stage_sizes() {
        let mut s = shape(1, 1, 112, 112);
        for expected in [56, 28, 14, 7, 4] {
            s = PoolKind::Max3x3s2.output_shape(s);
            assert_eq!(s.h, expected);
        }
    }
}
