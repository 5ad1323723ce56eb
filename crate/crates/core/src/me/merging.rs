use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{join, Activation, BatchNorm, BnMode, Conv2d, ConvSpec, Layer, Param};
use crate::tensor::Tensor;

/// Dense pointwise convolution from `C` channels down to `C̃`, then BN and ReLU.
#[derive(Debug, Clone)]
pub struct MergingOp {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub relu: Activation,
}

impl MergingOp {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, fusion_channels: usize, rng: &mut R) -> Result<Self> {
        if fusion_channels == 0 || fusion_channels > in_channels {
            return Err(Error::InvalidSpec(format!(
                "merging needs 1 <= fusion ({fusion_channels}) <= in ({in_channels})"
            )));
        }
        Ok(MergingOp {
            conv: Conv2d::new(ConvSpec::pointwise(in_channels, fusion_channels, 1)?, rng)?,
            bn: BatchNorm::new(fusion_channels)?,
            relu: Activation::relu(),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.conv.spec.in_channels
    }

    pub fn fusion_channels(&self) -> usize {
        self.conv.spec.out_channels
    }
}

pub fn merging_forward(x: &Tensor, op: &mut MergingOp) -> Result<Tensor> {
    op.forward(x)
}

impl Layer for MergingOp {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.shape().c != self.in_channels() {
            return Err(Error::InvalidShape(format!(
                "merging expects {} channels, got {}",
                self.in_channels(),
                x.shape()
            )));
        }
        let z = self.conv.forward(x)?;
        let z = self.bn.forward(&z)?;
        self.relu.forward(&z)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let g = self.relu.backward(grad_out)?;
        let g = self.bn.backward(&g)?;
        self.conv.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }

    fn set_bn_mode(&mut self, mode: BnMode) {
        self.bn.set_bn_mode(mode);
    }
}
