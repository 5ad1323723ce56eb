use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Layer, Param};
use crate::tensor::Tensor;

/// SGD with momentum and L2 weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Velocity per parameter name, created on first use.
    #[serde(skip)]
    pub velocity: BTreeMap<String, Tensor>,
}

impl OptimState {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        let st = OptimState {
            lr,
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        };
        st.validate()?;
        Ok(st)
    }

    /// Momentum 0.9 and weight decay 4e-5.
    pub fn imagenet(lr: f64) -> Result<Self> {
        Self::new(lr, 0.9, 4e-5)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay {} must be non-negative",
                self.weight_decay
            )));
        }
        Ok(())
    }

    fn update(&mut self, name: String, p: &mut Param) -> Result<()> {
        let shape = p.value.shape();
        if p.grad.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "sgd gradient",
                left: shape,
                right: p.grad.shape(),
            });
        }
        let v = self.velocity.entry(name).or_insert_with(|| Tensor::zeros(shape));
        if v.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "sgd velocity",
                left: shape,
                right: v.shape(),
            });
        }
        let wd = if p.decay { self.weight_decay } else { 0.0 };
        for ((vi, pi), gi) in v.data_mut().iter_mut().zip(p.value.data_mut()).zip(p.grad.data()) {
            *vi = self.momentum * *vi + gi + wd * *pi;
            *pi -= self.lr * *vi;
        }
        Ok(())
    }
}

/// One update of every parameter of `model` from its accumulated gradients:
/// `v ← m·v + g + wd·p`, `p ← p − lr·v`. Decay applies only to parameters
/// flagged for it.
pub fn sgd_step(model: &mut dyn Layer, st: &mut OptimState) -> Result<()> {
    st.validate()?;
    let mut result = Ok(());
    model.visit_params("", &mut |name, p| {
        if result.is_ok() {
            result = st.update(name, p);
        }
    });
    result
}
