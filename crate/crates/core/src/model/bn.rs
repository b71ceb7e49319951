//! Batch normalization and its folding into the preceding convolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::RealTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnParams {
    pub gamma: f64,
    pub beta: f64,
    pub mean: f64,
    pub var: f64,
    pub eps: f64,
}

impl BnParams {
    pub fn new(gamma: f64, beta: f64, mean: f64, var: f64, eps: f64) -> Result<Self> {
        let p = Self { gamma, beta, mean, var, eps };
        p.validate()?;
        Ok(p)
    }

    pub fn identity() -> Self {
        Self { gamma: 1.0, beta: 0.0, mean: 0.0, var: 1.0 - 1e-5, eps: 1e-5 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.var >= 0.0 && self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "batch norm needs var >= 0 and eps > 0, got var = {}, eps = {}",
                self.var, self.eps
            )));
        }
        Ok(())
    }

    /// `gamma / sqrt(var + eps)`
    pub fn gain(&self) -> f64 {
        self.gamma / (self.var + self.eps).sqrt()
    }

    pub fn apply(&self, y: f64) -> f64 {
        self.gamma * (y - self.mean) / (self.var + self.eps).sqrt() + self.beta
    }
}

pub fn bn_forward(y: &RealTensor, p: &BnParams) -> RealTensor {
    let values = y.values().iter().map(|&v| p.apply(v)).collect();
    RealTensor::new(y.shape().to_vec(), values).expect("shape preserved")
}

/// Folds one output channel's normalization into its weights and bias:
/// `c = gain * w`, `d = gain * (b - mean) + beta`.
pub fn fuse_bn(weights: &[f64], bias: f64, p: &BnParams) -> (Vec<f64>, f64) {
    let gain = p.gain();
    let fused = weights.iter().map(|w| gain * w).collect();
    (fused, gain * (bias - p.mean) + p.beta)
}
