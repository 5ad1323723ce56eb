use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{join, Layer, Param};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

/// Square convolution geometry. Kernels are 1×1 (pad 0) or 3×3 (pad 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub depthwise: bool,
}

impl ConvSpec {
    pub fn pointwise(in_channels: usize, out_channels: usize, groups: usize) -> Result<Self> {
        let spec = ConvSpec {
            in_channels,
            out_channels,
            kernel: 1,
            stride: 1,
            pad: 0,
            groups,
            depthwise: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn conv3x3(in_channels: usize, out_channels: usize, stride: usize) -> Result<Self> {
        let spec = ConvSpec {
            in_channels,
            out_channels,
            kernel: 3,
            stride,
            pad: 1,
            groups: 1,
            depthwise: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn depthwise3x3(channels: usize, stride: usize) -> Result<Self> {
        let spec = ConvSpec {
            in_channels: channels,
            out_channels: channels,
            kernel: 3,
            stride,
            pad: 1,
            groups: channels,
            depthwise: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.in_channels == 0 || self.out_channels == 0 || self.groups == 0 {
            return bad(format!("channels and groups must be positive: {self:?}"));
        }
        if self.kernel != 1 && self.kernel != 3 {
            return bad(format!("kernel {} not in {{1, 3}}", self.kernel));
        }
        if self.stride != 1 && self.stride != 2 {
            return bad(format!("stride {} not in {{1, 2}}", self.stride));
        }
        if (self.kernel == 3) != (self.pad == 1) || self.pad > 1 {
            return bad(format!("pad {} invalid for kernel {}", self.pad, self.kernel));
        }
        if self.in_channels % self.groups != 0 {
            return Err(Error::Indivisible {
                op: "conv2d input",
                channels: self.in_channels,
                groups: self.groups,
            });
        }
        if self.out_channels % self.groups != 0 {
            return Err(Error::Indivisible {
                op: "conv2d output",
                channels: self.out_channels,
                groups: self.groups,
            });
        }
        if self.depthwise && (self.groups != self.in_channels || self.in_channels != self.out_channels) {
            return bad(format!("depthwise requires groups == in == out: {self:?}"));
        }
        Ok(())
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn weight_shape(&self) -> Shape4 {
        Shape4 {
            n: self.out_channels,
            c: self.in_per_group(),
            h: self.kernel,
            w: self.kernel,
        }
    }

    pub fn out_dim(&self, dim: usize) -> usize {
        (dim + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        if input.c != self.in_channels {
            return Err(Error::InvalidShape(format!(
                "conv2d expects {} input channels, got {input}",
                self.in_channels
            )));
        }
        Shape4::new(input.n, self.out_channels, self.out_dim(input.h), self.out_dim(input.w))
    }

    /// Multiply-accumulates for one forward pass on `input`.
    pub fn macs(&self, input: Shape4) -> u64 {
        let (ho, wo) = (self.out_dim(input.h), self.out_dim(input.w));
        (input.n * ho * wo * self.kernel * self.kernel * self.in_per_group() * self.out_channels) as u64
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().numel()
    }
}

/// Output positions `o` whose input tap `o*stride + off - pad` lies in `0..in_len`.
fn valid_range(out_len: usize, in_len: usize, off: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if off >= pad { 0 } else { (pad - off).div_ceil(stride) };
    let reach = in_len + pad;
    let hi = if reach <= off {
        0
    } else {
        ((reach - 1 - off) / stride + 1).min(out_len)
    };
    (lo, hi.max(lo))
}

fn check_conv_inputs(x: &Tensor, spec: &ConvSpec, weights: &Tensor) -> Result<Shape4> {
    spec.validate()?;
    let out = spec.output_shape(x.shape())?;
    if weights.shape() != spec.weight_shape() {
        return Err(Error::ShapeMismatch {
            op: "conv2d weights",
            left: weights.shape(),
            right: spec.weight_shape(),
        });
    }
    Ok(out)
}

/// Grouped 2-D convolution. Each output pixel sums its taps in
/// (input channel, ky, kx) order, starting from the bias.
pub fn conv2d_forward(x: &Tensor, spec: &ConvSpec, weights: &Tensor, bias: Option<&[f64]>) -> Result<Tensor> {
    let os = check_conv_inputs(x, spec, weights)?;
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::InvalidSpec(format!(
                "bias has {} entries for {} output channels",
                b.len(),
                spec.out_channels
            )));
        }
    }
    let is = x.shape();
    let (k, s, pad) = (spec.kernel, spec.stride, spec.pad);
    let (ipg, opg) = (spec.in_per_group(), spec.out_per_group());
    let w = weights.data();
    let mut out = Tensor::zeros(os);
    for n in 0..is.n {
        for oc in 0..spec.out_channels {
            let g = oc / opg;
            let plane = out.plane_mut(n, oc);
            if let Some(b) = bias {
                plane.fill(b[oc]);
            }
            for icl in 0..ipg {
                let xin = x.plane(n, g * ipg + icl);
                for ky in 0..k {
                    let (y0, y1) = valid_range(os.h, is.h, ky, s, pad);
                    for kx in 0..k {
                        let wv = w[((oc * ipg + icl) * k + ky) * k + kx];
                        let (x0, x1) = valid_range(os.w, is.w, kx, s, pad);
                        for oy in y0..y1 {
                            let iy = oy * s + ky - pad;
                            let orow = &mut plane[oy * os.w..(oy + 1) * os.w];
                            let irow = &xin[iy * is.w..(iy + 1) * is.w];
                            for ox in x0..x1 {
                                orow[ox] += wv * irow[ox * s + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

pub fn conv2d_backward(x: &Tensor, spec: &ConvSpec, weights: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    let os = check_conv_inputs(x, spec, weights)?;
    if grad_out.shape() != os {
        return Err(Error::ShapeMismatch {
            op: "conv2d backward",
            left: grad_out.shape(),
            right: os,
        });
    }
    let is = x.shape();
    let (k, s, pad) = (spec.kernel, spec.stride, spec.pad);
    let (ipg, opg) = (spec.in_per_group(), spec.out_per_group());
    let w = weights.data();
    let mut gx = Tensor::zeros(is);
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = vec![0.0; spec.out_channels];
    for n in 0..is.n {
        for oc in 0..spec.out_channels {
            let g = oc / opg;
            let go = grad_out.plane(n, oc);
            gb[oc] += go.iter().sum::<f64>();
            for icl in 0..ipg {
                let ic = g * ipg + icl;
                for ky in 0..k {
                    let (y0, y1) = valid_range(os.h, is.h, ky, s, pad);
                    for kx in 0..k {
                        let widx = ((oc * ipg + icl) * k + ky) * k + kx;
                        let wv = w[widx];
                        let (x0, x1) = valid_range(os.w, is.w, kx, s, pad);
                        let xin = x.plane(n, ic);
                        let mut acc = 0.0;
                        for oy in y0..y1 {
                            let iy = oy * s + ky - pad;
                            for ox in x0..x1 {
                                acc += go[oy * os.w + ox] * xin[iy * is.w + ox * s + kx - pad];
                            }
                        }
                        gw.data_mut()[widx] += acc;
                        let gin = gx.plane_mut(n, ic);
                        for oy in y0..y1 {
                            let iy = oy * s + ky - pad;
                            for ox in x0..x1 {
                                gin[iy * is.w + ox * s + kx - pad] += wv * go[oy * os.w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

/// Convolution layer with optional bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: Param,
    pub bias: Option<Param>,
    cache: Option<Tensor>,
}

impl Conv2d {
    /// Bias-free layer with normal init of variance `2 / (k² · out_channels)`.
    pub fn new<R: Rng + ?Sized>(spec: ConvSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let std = (2.0 / (spec.kernel * spec.kernel * spec.out_channels) as f64).sqrt();
        let weight = Tensor::randn(spec.weight_shape(), std, rng);
        Self::from_weights(spec, weight, None)
    }

    pub fn from_weights(spec: ConvSpec, weight: Tensor, bias: Option<Vec<f64>>) -> Result<Self> {
        spec.validate()?;
        if weight.shape() != spec.weight_shape() {
            return Err(Error::ShapeMismatch {
                op: "conv2d weights",
                left: weight.shape(),
                right: spec.weight_shape(),
            });
        }
        let bias = match bias {
            Some(b) => Some(Param::new(
                Tensor::from_vec(Shape4::vector(spec.out_channels)?, b)?,
                false,
            )),
            None => None,
        };
        Ok(Conv2d {
            spec,
            weight: Param::new(weight, true),
            bias,
            cache: None,
        })
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let bias = self.bias.as_ref().map(|b| b.value.data());
        let out = conv2d_forward(x, &self.spec, &self.weight.value, bias)?;
        self.cache = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self.cache.as_ref().ok_or(Error::MissingForwardCache("conv2d"))?;
        let grads = conv2d_backward(x, &self.spec, &self.weight.value, grad_out)?;
        self.weight.grad.add_assign(&grads.weights)?;
        if let Some(b) = self.bias.as_mut() {
            for (g, d) in b.grad.data_mut().iter_mut().zip(&grads.bias) {
                *g += d;
            }
        }
        Ok(grads.input)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "weight"), &mut self.weight);
        if let Some(b) = self.bias.as_mut() {
            f(join(prefix, "bias"), b);
        }
    }
}
