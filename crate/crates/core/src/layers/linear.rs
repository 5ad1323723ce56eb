use rand::Rng;

use super::{join, Layer, Param};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

/// Affine map on `n × c × 1 × 1` inputs. `weights` is `classes × c × 1 × 1`,
/// `bias` is `1 × classes × 1 × 1`; the result is `n × classes × 1 × 1`.
pub fn linear_forward(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.h != 1 || s.w != 1 {
        return Err(Error::InvalidShape(format!("linear expects n x c x 1 x 1, got {s}")));
    }
    let ws = weights.shape();
    if ws.c != s.c || ws.h != 1 || ws.w != 1 {
        return Err(Error::ShapeMismatch {
            op: "linear weights",
            left: ws,
            right: s,
        });
    }
    if bias.len() != ws.n {
        return Err(Error::InvalidShape(format!(
            "bias has {} entries for {} classes",
            bias.len(),
            ws.n
        )));
    }
    let (w, b, xd) = (weights.data(), bias.data(), x.data());
    let out_shape = Shape4::new(s.n, ws.n, 1, 1)?;
    let mut out = Tensor::zeros(out_shape);
    let od = out.data_mut();
    for n in 0..s.n {
        let row = &xd[n * s.c..(n + 1) * s.c];
        for k in 0..ws.n {
            let wr = &w[k * s.c..(k + 1) * s.c];
            let mut acc = b[k];
            for (wi, xi) in wr.iter().zip(row) {
                acc += wi * xi;
            }
            od[n * ws.n + k] = acc;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Linear {
    /// Normal init with variance `1 / in_features`, zero bias.
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Result<Self> {
        let w = Tensor::randn(
            Shape4::new(out_features, in_features, 1, 1)?,
            (1.0 / in_features as f64).sqrt(),
            rng,
        );
        Self::from_weights(w, Tensor::zeros(Shape4::vector(out_features)?))
    }

    pub fn from_weights(weight: Tensor, bias: Tensor) -> Result<Self> {
        if bias.len() != weight.shape().n {
            return Err(Error::InvalidShape("linear bias/weight mismatch".into()));
        }
        Ok(Linear {
            weight: Param::new(weight, true),
            bias: Param::new(bias, false),
            cache: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape().c
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape().n
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = linear_forward(x, &self.weight.value, &self.bias.value)?;
        self.cache = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self.cache.as_ref().ok_or(Error::MissingForwardCache("linear"))?;
        let (s, k) = (x.shape(), self.out_features());
        if grad_out.shape() != Shape4::new(s.n, k, 1, 1)? {
            return Err(Error::InvalidShape(format!("linear backward got {}", grad_out.shape())));
        }
        let mut gx = Tensor::zeros(s);
        let (g, xd) = (grad_out.data(), x.data());
        let w = self.weight.value.data();
        for n in 0..s.n {
            for j in 0..k {
                let go = g[n * k + j];
                self.bias.grad.data_mut()[j] += go;
                let gw = &mut self.weight.grad.data_mut()[j * s.c..(j + 1) * s.c];
                for (gwi, xi) in gw.iter_mut().zip(&xd[n * s.c..(n + 1) * s.c]) {
                    *gwi += go * xi;
                }
                let gxr = &mut gx.data_mut()[n * s.c..(n + 1) * s.c];
                for (gxi, wi) in gxr.iter_mut().zip(&w[j * s.c..(j + 1) * s.c]) {
                    *gxi += go * wi;
                }
            }
        }
        Ok(gx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}
