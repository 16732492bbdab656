//! Activation distributions: paired mean/variance tensors propagated
//! layer by layer.

use crate::error::{Result, VdpError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTensor {
    pub mean: Tensor,
    pub variance: Tensor,
}

impl GaussianTensor {
    pub fn new(mean: Tensor, variance: Tensor) -> Result<Self> {
        mean.same_shape(&variance)?;
        if variance.data().iter().any(|&v| v < 0.0) {
            return Err(VdpError::NonFinite("negative variance".into()));
        }
        Ok(Self { mean, variance })
    }

    /// Deterministic input: mean carries the data, variance is zero.
    pub fn deterministic(mean: Tensor) -> Self {
        let variance = Tensor::zeros(mean.shape().to_vec());
        Self { mean, variance }
    }

    pub fn shape(&self) -> &[usize] {
        self.mean.shape()
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}
