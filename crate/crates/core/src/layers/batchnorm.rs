use super::{join, Layer, Param};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running statistics updated.
    Train,
    /// Running statistics.
    Eval,
    /// Pass-through, used by structural analysis.
    Identity,
}

#[derive(Debug, Clone)]
enum Cache {
    Normalized {
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch: bool,
    },
    Identity,
}

/// Per-channel batch normalization over (n, h, w).
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub epsilon: f64,
    pub momentum: f64,
    pub mode: BnMode,
    cache: Option<Cache>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Result<Self> {
        let v = Shape4::vector(channels)?;
        Ok(BatchNorm {
            gamma: Param::new(Tensor::ones(v), false),
            beta: Param::new(Tensor::zeros(v), false),
            running_mean: Tensor::zeros(v),
            running_var: Tensor::ones(v),
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
            mode: BnMode::Train,
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn normalize(&mut self, x: &Tensor) -> Result<(Tensor, Vec<f64>, bool)> {
        let s = x.shape();
        if s.c != self.channels() {
            return Err(Error::InvalidShape(format!(
                "batchnorm over {} channels got {s}",
                self.channels()
            )));
        }
        let count = s.n * s.plane();
        let mut xhat = Tensor::zeros(s);
        let mut inv_std = vec![0.0; s.c];
        let batch = self.mode == BnMode::Train;
        if batch && count < 2 {
            return Err(Error::DegenerateBatch(count));
        }
        for c in 0..s.c {
            let (mean, var) = if batch {
                let mut sum = 0.0;
                for n in 0..s.n {
                    sum += x.plane(n, c).iter().sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0;
                for n in 0..s.n {
                    sq += x.plane(n, c).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                }
                let var = sq / count as f64;
                let unbiased = sq / (count - 1) as f64;
                let m = self.momentum;
                let rm = &mut self.running_mean.data_mut()[c];
                *rm = (1.0 - m) * *rm + m * mean;
                let rv = &mut self.running_var.data_mut()[c];
                *rv = (1.0 - m) * *rv + m * unbiased;
                (mean, var)
            } else {
                (self.running_mean.data()[c], self.running_var.data()[c])
            };
            let is = 1.0 / (var + self.epsilon).sqrt();
            inv_std[c] = is;
            for n in 0..s.n {
                let src = x.plane(n, c);
                for (d, v) in xhat.plane_mut(n, c).iter_mut().zip(src) {
                    *d = (v - mean) * is;
                }
            }
        }
        Ok((xhat, inv_std, batch))
    }
}

/// Applies `st` to `x`; in train mode the running statistics are updated.
pub fn batchnorm_forward(x: &Tensor, st: &mut BatchNorm) -> Result<Tensor> {
    st.forward(x)
}

impl Layer for BatchNorm {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if self.mode == BnMode::Identity {
            if x.shape().c != self.channels() {
                return Err(Error::InvalidShape(format!(
                    "batchnorm over {} channels got {}",
                    self.channels(),
                    x.shape()
                )));
            }
            self.cache = Some(Cache::Identity);
            return Ok(x.clone());
        }
        let (xhat, inv_std, batch) = self.normalize(x)?;
        let s = x.shape();
        let mut out = xhat.clone();
        for c in 0..s.c {
            let (g, b) = (self.gamma.value.data()[c], self.beta.value.data()[c]);
            for n in 0..s.n {
                out.plane_mut(n, c).iter_mut().for_each(|v| *v = g * *v + b);
            }
        }
        self.cache = Some(Cache::Normalized { xhat, inv_std, batch });
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(Error::MissingForwardCache("batchnorm"))?;
        let (xhat, inv_std, batch) = match cache {
            Cache::Identity => return Ok(grad_out.clone()),
            Cache::Normalized { xhat, inv_std, batch } => (xhat, inv_std, *batch),
        };
        let s = xhat.shape();
        if grad_out.shape() != s {
            return Err(Error::ShapeMismatch {
                op: "batchnorm backward",
                left: grad_out.shape(),
                right: s,
            });
        }
        let count = (s.n * s.plane()) as f64;
        let mut gx = Tensor::zeros(s);
        for c in 0..s.c {
            let gamma = self.gamma.value.data()[c];
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for n in 0..s.n {
                for (dy, xh) in grad_out.plane(n, c).iter().zip(xhat.plane(n, c)) {
                    sum_dy += dy;
                    sum_dy_xhat += dy * xh;
                }
            }
            self.gamma.grad.data_mut()[c] += sum_dy_xhat;
            self.beta.grad.data_mut()[c] += sum_dy;
            let k = gamma * inv_std[c];
            for n in 0..s.n {
                let dys = grad_out.plane(n, c);
                let xhs = xhat.plane(n, c);
                for ((d, dy), xh) in gx.plane_mut(n, c).iter_mut().zip(dys).zip(xhs) {
                    *d = if batch {
                        k * (dy - sum_dy / count - xh * sum_dy_xhat / count)
                    } else {
                        k * dy
                    };
                }
            }
        }
        Ok(gx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "running_mean"), &mut self.running_mean);
        f(join(prefix, "running_var"), &mut self.running_var);
    }

    fn set_bn_mode(&mut self, mode: BnMode) {
        self.mode = mode;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn channel_stats(t: &Tensor, c: usize) -> (f64, f64) {
        let s = t.shape();
        let vals: Vec<f64> = (0..s.n).flat_map(|n| t.plane(n, c).to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    }

    #[test]
    fn train_mode_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // Input spread large enough that eps / var stays below 1e-8.
        let x = Tensor::randn(Shape4::new(4, 3, 5, 5).unwrap(), 300.0, &mut rng).map(|v| v + 17.0);
        let mut bn = BatchNorm::new(3).unwrap();
        let y = bn.forward(&x).unwrap();
        for c in 0..3 {
            let (m, v) = channel_stats(&y, c);
            assert!(m.abs() < 1e-10, "mean {m}");
            assert!((v - 1.0).abs() < 1e-8, "var {v}");
        }
    }

    #[test]
    fn train_mode_variance_matches_epsilon_shrink() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::randn(Shape4::new(3, 2, 4, 4).unwrap(), 1.0, &mut rng);
        let mut bn = BatchNorm::new(2).unwrap();
        let y = bn.forward(&x).unwrap();
        for c in 0..2 {
            let (_, vx) = channel_stats(&x, c);
            let (m, v) = channel_stats(&y, c);
            assert!(m.abs() < 1e-10);
            assert!((v - vx / (vx + BN_EPSILON)).abs() < 1e-12);
        }
    }

    #[test]
    fn running_stats_follow_ema() {
        let x = Tensor::from_vec(Shape4::new(1, 1, 1, 4).unwrap(), vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let mut bn = BatchNorm::new(1).unwrap();
        bn.forward(&x).unwrap();
        // mean 3, unbiased var 14/3
        assert!((bn.running_mean.data()[0] - 0.3).abs() < 1e-15);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 14.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn identity_mode_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::randn(Shape4::new(2, 3, 2, 2).unwrap(), 1.0, &mut rng);
        let mut bn = BatchNorm::new(3).unwrap();
        bn.mode = BnMode::Identity;
        assert_eq!(bn.forward(&x).unwrap(), x);
        assert_eq!(bn.backward(&x).unwrap(), x);
    }

    #[test]
    fn eval_mode_affine() {
        let mut bn = BatchNorm::new(1).unwrap();
        bn.mode = BnMode::Eval;
        bn.gamma.value.fill(2.0);
        bn.beta.value.fill(3.0);
        let x = Tensor::ones(Shape4::new(1, 1, 2, 2).unwrap());
        let y = bn.forward(&x).unwrap();
        let expected = 2.0 / (1.0 + BN_EPSILON).sqrt() + 3.0;
        assert!(y.data().iter().all(|&v| (v - expected).abs() < 1e-15));
        assert!((expected - 5.0).abs() < 1e-5);
    }

    #[test]
    fn single_value_batch_rejected() {
        let mut bn = BatchNorm::new(2).unwrap();
        let x = Tensor::ones(Shape4::new(1, 2, 1, 1).unwrap());
        assert_eq!(bn.forward(&x), Err(Error::DegenerateBatch(1)));
        bn.mode = BnMode::Eval;
        assert!(bn.forward(&x).is_ok());
    }
}
