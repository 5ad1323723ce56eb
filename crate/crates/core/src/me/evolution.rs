use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{join, Activation, BatchNorm, BnMode, Conv2d, ConvSpec, Layer, Param};
use crate::tensor::{CombineMode, Tensor};

/// 3×3 evolution convolution (BN, ReLU) followed by the pointwise matching
/// convolution back to `C` channels (BN, sigmoid gate). In addition mode the
/// gate is dropped and the op ends at BN.
#[derive(Debug, Clone)]
pub struct EvolutionOp {
    pub evolve: Conv2d,
    pub evolve_bn: BatchNorm,
    pub evolve_relu: Activation,
    pub matching: Conv2d,
    pub matching_bn: BatchNorm,
    pub gate: Option<Activation>,
}

impl EvolutionOp {
    pub fn new<R: Rng + ?Sized>(
        fusion_channels: usize,
        match_channels: usize,
        stride: usize,
        mode: CombineMode,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(EvolutionOp {
            evolve: Conv2d::new(ConvSpec::conv3x3(fusion_channels, fusion_channels, stride)?, rng)?,
            evolve_bn: BatchNorm::new(fusion_channels)?,
            evolve_relu: Activation::relu(),
            matching: Conv2d::new(ConvSpec::pointwise(fusion_channels, match_channels, 1)?, rng)?,
            matching_bn: BatchNorm::new(match_channels)?,
            gate: match mode {
                CombineMode::Product => Some(Activation::sigmoid()),
                CombineMode::Addition => None,
            },
        })
    }

    pub fn fusion_channels(&self) -> usize {
        self.evolve.spec.in_channels
    }

    pub fn match_channels(&self) -> usize {
        self.matching.spec.out_channels
    }

    pub fn stride(&self) -> usize {
        self.evolve.spec.stride
    }
}

pub fn evolution_forward(z: &Tensor, op: &mut EvolutionOp) -> Result<Tensor> {
    op.forward(z)
}

impl Layer for EvolutionOp {
    fn forward(&mut self, z: &Tensor) -> Result<Tensor> {
        if z.shape().c != self.fusion_channels() {
            return Err(Error::InvalidShape(format!(
                "evolution expects {} channels, got {}",
                self.fusion_channels(),
                z.shape()
            )));
        }
        let t = self.evolve.forward(z)?;
        let t = self.evolve_bn.forward(&t)?;
        let t = self.evolve_relu.forward(&t)?;
        let t = self.matching.forward(&t)?;
        let t = self.matching_bn.forward(&t)?;
        match self.gate.as_mut() {
            Some(g) => g.forward(&t),
            None => Ok(t),
        }
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let g = match self.gate.as_mut() {
            Some(gate) => gate.backward(grad_out)?,
            None => grad_out.clone(),
        };
        let g = self.matching_bn.backward(&g)?;
        let g = self.matching.backward(&g)?;
        let g = self.evolve_relu.backward(&g)?;
        let g = self.evolve_bn.backward(&g)?;
        self.evolve.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.evolve.visit_params(&join(prefix, "evolve"), f);
        self.evolve_bn.visit_params(&join(prefix, "evolve_bn"), f);
        self.matching.visit_params(&join(prefix, "matching"), f);
        self.matching_bn.visit_params(&join(prefix, "matching_bn"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.evolve_bn.visit_buffers(&join(prefix, "evolve_bn"), f);
        self.matching_bn.visit_buffers(&join(prefix, "matching_bn"), f);
    }

    fn set_bn_mode(&mut self, mode: BnMode) {
        self.evolve_bn.set_bn_mode(mode);
        self.matching_bn.set_bn_mode(mode);
    }
}
