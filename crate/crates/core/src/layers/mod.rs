//! Differentiable primitives with hand-written backward passes.
//!
//! Each layer caches what its backward pass needs during `forward`; calling
//! `backward` without a preceding `forward` is an error. Parameter gradients
//! accumulate into [`Param::grad`] until cleared with [`Layer::zero_grad`].

mod activation;
mod batchnorm;
mod conv;
mod linear;
mod pool;
mod shuffle;

pub use activation::{activation, Activation, ActivationKind};
pub use batchnorm::{batchnorm_forward, BatchNorm, BnMode, BN_EPSILON, BN_MOMENTUM};
pub use conv::{conv2d_backward, conv2d_forward, Conv2d, ConvGrads, ConvSpec};
pub use linear::{linear_forward, Linear};
pub use pool::{pool, Pool, PoolKind};
pub use shuffle::{channel_shuffle, shuffle_permutation, ChannelShuffle};

use crate::error::Result;
use crate::tensor::Tensor;

/// A learnable tensor and its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    /// Whether weight decay applies to this tensor.
    pub decay: bool,
}

impl Param {
    pub fn new(value: Tensor, decay: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad, decay }
    }
}

pub trait Layer {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor>;

    /// Gradient w.r.t. the last forward input; parameter gradients accumulate.
    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor>;

    fn visit_params(&mut self, _prefix: &str, _f: &mut dyn FnMut(String, &mut Param)) {}

    /// Non-learnable state that must be persisted (BN running statistics).
    fn visit_buffers(&mut self, _prefix: &str, _f: &mut dyn FnMut(String, &mut Tensor)) {}

    fn set_bn_mode(&mut self, _mode: BnMode) {}

    fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, p| p.grad.fill(0.0));
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
