//! Small building blocks shared by the fusion modules.

use crate::error::Result;
use crate::rng::CounterRng;
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

/// Standard deviation of every randomly initialized weight.
pub const INIT_STD: f64 = 0.02;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (K * (x + 0.044_715 * x * x * x)).tanh())
}

pub fn gaussian(shape: &[usize], rng: &mut CounterRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gaussian(0.0, INIT_STD))
}

/// Learnable affine pair of a layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn identity(channels: usize) -> Self {
        Self { gamma: Tensor::full(&[channels], 1.0), beta: Tensor::zeros(&[channels]) }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gamma, &self.beta, LN_EPS)
    }
}
