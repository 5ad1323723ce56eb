use serde::{Deserialize, Serialize};

use super::Layer;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Sigmoid,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &Tensor, kind: ActivationKind) -> Tensor {
    match kind {
        ActivationKind::Relu => x.map(|v| v.max(0.0)),
        ActivationKind::Sigmoid => x.map(sigmoid),
    }
}

/// Elementwise activation. The cached output suffices for both kinds; the
/// ReLU derivative at exactly 0 is taken as 0.
#[derive(Debug, Clone)]
pub struct Activation {
    pub kind: ActivationKind,
    cache: Option<Tensor>,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        Activation { kind, cache: None }
    }

    pub fn relu() -> Self {
        Self::new(ActivationKind::Relu)
    }

    pub fn sigmoid() -> Self {
        Self::new(ActivationKind::Sigmoid)
    }
}

impl Layer for Activation {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = activation(x, self.kind);
        self.cache = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let y = self.cache.as_ref().ok_or(Error::MissingForwardCache("activation"))?;
        match self.kind {
            ActivationKind::Relu => y.zip_map(grad_out, "relu backward", |y, g| if y > 0.0 { g } else { 0.0 }),
            ActivationKind::Sigmoid => y.zip_map(grad_out, "sigmoid backward", |y, g| g * y * (1.0 - y)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn row(vals: &[f64]) -> Tensor {
        Tensor::from_vec(Shape4::new(1, vals.len(), 1, 1).unwrap(), vals.to_vec()).unwrap()
    }

    #[test]
    fn relu_values() {
        assert_eq!(
            activation(&row(&[-1.0, 0.0, 2.0]), ActivationKind::Relu).data(),
            &[0.0, 0.0, 2.0]
        );
    }

    #[test]
    fn sigmoid_values() {
        let y = activation(&row(&[0.0, 20.0, -20.0]), ActivationKind::Sigmoid);
        assert_eq!(y.data()[0], 0.5);
        assert!((y.data()[1] - 1.0).abs() < 1e-8 && y.data()[1] < 1.0);
        assert!(y.data()[2].abs() < 1e-8 && y.data()[2] > 0.0);
    }

    #[test]
    fn relu_gradient_convention() {
        let mut a = Activation::relu();
        a.forward(&row(&[-1.0, 0.0, 3.0])).unwrap();
        let g = a.backward(&row(&[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn ranges_hold() {
        let x = row(&(-30..=30).map(|v| v as f64 * 0.97).collect::<Vec<_>>());
        assert!(activation(&x, ActivationKind::Sigmoid)
            .data()
            .iter()
            .all(|&v| v > 0.0 && v < 1.0));
        assert!(activation(&x, ActivationKind::Relu).data().iter().all(|&v| v >= 0.0));
    }
}
