//! Learnable state: per-weight (mu, rho) with effective variance
//! softplus(rho), plus gradient accumulators.
//!
//! softplus(rho) and sigmoid(rho) are cached and refreshed whenever rho
//! changes through the provided mutators, so per-sample forward/backward
//! passes never re-evaluate transcendentals over the full parameter set.

use crate::error::Result;
use crate::numerics::{sigmoid_scalar, softplus_scalar};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct VariationalParameter {
    pub mu: Tensor,
    rho: Tensor,
    var: Tensor,
    dvar_drho: Tensor,
    pub grad_mu: Tensor,
    pub grad_rho: Tensor,
}

impl VariationalParameter {
    pub fn new(mu: Tensor, rho: Tensor) -> Result<Self> {
        mu.same_shape(&rho)?;
        let shape = mu.shape().to_vec();
        let mut p = Self {
            mu,
            rho,
            var: Tensor::zeros(shape.clone()),
            dvar_drho: Tensor::zeros(shape.clone()),
            grad_mu: Tensor::zeros(shape.clone()),
            grad_rho: Tensor::zeros(shape),
        };
        p.refresh();
        Ok(p)
    }

    /// Hyper-prior initialization: mu ~ N(0, 0.05), rho ~ N(pi, 0.05).
    pub fn init(shape: Vec<usize>, pi: f64, rng: &mut SeededRng) -> Self {
        let n: usize = shape.iter().product();
        let sd = 0.05f64.sqrt();
        let mu: Vec<f64> = (0..n).map(|_| sd * rng.next_normal()).collect();
        let rho: Vec<f64> = (0..n).map(|_| pi + sd * rng.next_normal()).collect();
        Self::new(
            Tensor::new(shape.clone(), mu).unwrap(),
            Tensor::new(shape, rho).unwrap(),
        )
        .unwrap()
    }

    fn refresh(&mut self) {
        for i in 0..self.rho.len() {
            let r = self.rho.data()[i];
            self.var.data_mut()[i] = softplus_scalar(r);
            self.dvar_drho.data_mut()[i] = sigmoid_scalar(r);
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn rho(&self) -> &Tensor {
        &self.rho
    }

    pub fn set_rho(&mut self, rho: Tensor) -> Result<()> {
        self.mu.same_shape(&rho)?;
        self.rho = rho;
        self.refresh();
        Ok(())
    }

    /// Effective variance softplus(rho), strictly positive.
    pub fn variance(&self) -> &Tensor {
        &self.var
    }

    /// d variance / d rho = sigmoid(rho).
    pub fn variance_jacobian(&self) -> &Tensor {
        &self.dvar_drho
    }

    /// Overwrite (mu, rho) from flat slices and refresh the caches.
    pub fn load_flat(&mut self, mu: &[f64], rho: &[f64]) {
        self.mu.data_mut().copy_from_slice(mu);
        self.rho.data_mut().copy_from_slice(rho);
        self.refresh();
    }

    /// Overwrite mu only (deterministic-mode update path).
    pub fn load_mu(&mut self, mu: &[f64]) {
        self.mu.data_mut().copy_from_slice(mu);
    }

    pub fn zero_grads(&mut self) {
        self.grad_mu.data_mut().fill(0.0);
        self.grad_rho.data_mut().fill(0.0);
    }
}
