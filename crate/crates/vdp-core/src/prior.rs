//! Frozen (mu, variance) copies of a posterior, used as the KL anchor
//! for the next task.

use std::collections::BTreeMap;

use crate::error::{Result, VdpError};
use crate::network::{MultiHeadNetwork, NetworkMode, ParamKey, Scope};
use crate::tensor::Tensor;

/// Immutable per-parameter prior: variance stored post-softplus.
#[derive(Debug, Clone)]
pub struct PriorSnapshot {
    entries: BTreeMap<ParamKey, (Tensor, Tensor)>,
}

impl PriorSnapshot {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    /// Standard-normal anchor N(0, 1) for every parameter in scope.
    pub fn standard_normal(net: &MultiHeadNetwork, scope: &Scope) -> Result<Self> {
        if net.mode != NetworkMode::Variational {
            return Err(VdpError::RequiresVariationalMode);
        }
        let mut entries = BTreeMap::new();
        for (key, p) in net.scope_params(scope)? {
            let shape = p.mu.shape().to_vec();
            entries.insert(key, (Tensor::zeros(shape.clone()), Tensor::full(shape, 1.0)));
        }
        Ok(Self { entries })
    }

    /// Deep copy of (mu, softplus(rho)) for every parameter in scope.
    pub fn of_posterior(net: &MultiHeadNetwork, scope: &Scope) -> Result<Self> {
        if net.mode != NetworkMode::Variational {
            return Err(VdpError::RequiresVariationalMode);
        }
        let mut entries = BTreeMap::new();
        for (key, p) in net.scope_params(scope)? {
            entries.insert(key, (p.mu.clone(), p.variance().clone()));
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: ParamKey) -> Option<&(Tensor, Tensor)> {
        self.entries.get(&key)
    }

    pub fn insert(&mut self, key: ParamKey, mu: Tensor, variance: Tensor) {
        self.entries.insert(key, (mu, variance));
    }

    /// Merge `other` into self, overwriting shared keys.
    pub fn extend(&mut self, other: PriorSnapshot) {
        self.entries.extend(other.entries);
    }

    pub fn keys(&self) -> Vec<ParamKey> {
        self.entries.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
