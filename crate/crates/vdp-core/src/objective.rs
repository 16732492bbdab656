//! Closed-form negative ELBO: Gaussian negative log-likelihood of the
//! one-hot label under the propagated predictive moments, plus the
//! tau-weighted diagonal-Gaussian KL between posterior and prior.
//!
//! Per batch, the NLL is averaged over samples and the KL counted once.

use crate::error::{Result, VdpError};
use crate::gaussian::GaussianTensor;
use crate::layers::GaussGrad;
use crate::network::{MultiHeadNetwork, Scope, ScopeLayout};
use crate::prior::PriorSnapshot;
use crate::tensor::Tensor;

/// Predictive variances are clamped here before any log or reciprocal.
pub const VARIANCE_CLAMP: f64 = 1e-8;
/// Probability clamp for the deterministic cross-entropy path.
pub const PROB_CLAMP: f64 = 1e-12;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8; // ln(2*pi)/2

#[derive(Debug, Clone, Copy)]
pub struct ObjectiveBreakdown {
    pub nll: f64,
    pub kl: f64,
    pub tau: f64,
    pub total: f64,
}

pub fn negative_elbo(nll: f64, kl: f64, tau: f64) -> ObjectiveBreakdown {
    ObjectiveBreakdown { nll, kl, tau, total: nll + tau * kl }
}

fn check_one_hot(y: &Tensor) -> Result<()> {
    let mut ones = 0usize;
    for &v in y.data() {
        if v == 1.0 {
            ones += 1;
        } else if v != 0.0 {
            return Err(VdpError::NotOneHot);
        }
    }
    if ones != 1 {
        return Err(VdpError::NotOneHot);
    }
    Ok(())
}

/// sum_n [ ln(2 pi)/2 + ln(var_n)/2 + (y_n - mu_n)^2 / (2 var_n) ]
/// with var clamped at `VARIANCE_CLAMP`.
pub fn gaussian_nll(y: &Tensor, pred: &GaussianTensor) -> Result<f64> {
    check_one_hot(y)?;
    y.same_shape(&pred.mean)?;
    let mut total = 0.0;
    for i in 0..y.len() {
        let v = pred.variance.data()[i].max(VARIANCE_CLAMP);
        let r = y.data()[i] - pred.mean.data()[i];
        total += HALF_LN_2PI + 0.5 * v.ln() + 0.5 * r * r / v;
    }
    Ok(total)
}

/// Gradient of `gaussian_nll` with respect to the predictive moments.
/// Straight-through clamp: zero variance-gradient where the clamp is
/// active.
pub fn gaussian_nll_backward(y: &Tensor, pred: &GaussianTensor) -> Result<GaussGrad> {
    check_one_hot(y)?;
    y.same_shape(&pred.mean)?;
    let n = y.len();
    let mut d_mean = vec![0.0; n];
    let mut d_var = vec![0.0; n];
    for i in 0..n {
        let raw_v = pred.variance.data()[i];
        let v = raw_v.max(VARIANCE_CLAMP);
        let r = y.data()[i] - pred.mean.data()[i];
        d_mean[i] = -r / v;
        if raw_v > VARIANCE_CLAMP {
            d_var[i] = 0.5 / v - 0.5 * r * r / (v * v);
        }
    }
    Ok(GaussGrad {
        mean: Tensor::new(y.shape().to_vec(), d_mean)?,
        variance: Tensor::new(y.shape().to_vec(), d_var)?,
    })
}

/// Scalar KL( N(mq, vq) || N(mp, vp) ), the standard closed form.
pub fn kl_scalar(mq: f64, vq: f64, mp: f64, vp: f64) -> f64 {
    0.5 * ((vp / vq).ln() + vq / vp + (mq - mp) * (mq - mp) / vp - 1.0)
}

/// Summed KL over every parameter block in scope against its prior entry.
pub fn kl_diag_gauss(net: &MultiHeadNetwork, scope: &Scope, prior: &PriorSnapshot) -> Result<f64> {
    let mut total = 0.0;
    for (key, p) in net.scope_params(scope)? {
        let (mu_p, var_p) = prior.get(key).ok_or_else(|| {
            VdpError::DimensionMismatch(format!("prior has no entry for {key:?}"))
        })?;
        p.mu.same_shape(mu_p)?;
        let vq = p.variance().data();
        for i in 0..p.len() {
            total += kl_scalar(p.mu.data()[i], vq[i], mu_p.data()[i], var_p.data()[i]);
        }
    }
    Ok(total)
}

/// Accumulate tau * dKL/d(mu, rho) into the scope-flat gradient vector.
pub fn kl_gradients(
    net: &MultiHeadNetwork,
    scope: &Scope,
    prior: &PriorSnapshot,
    layout: &ScopeLayout,
    tau: f64,
    acc: &mut [f64],
) -> Result<()> {
    for (key, p) in net.scope_params(scope)? {
        let Some((offset, len, has_rho)) = layout.block(key) else { continue };
        let (mu_p, var_p) = prior.get(key).ok_or_else(|| {
            VdpError::DimensionMismatch(format!("prior has no entry for {key:?}"))
        })?;
        let vq = p.variance().data();
        let jac = p.variance_jacobian().data();
        for i in 0..len {
            let vp = var_p.data()[i];
            acc[offset + i] += tau * (p.mu.data()[i] - mu_p.data()[i]) / vp;
            if has_rho {
                let d_var = 0.5 * (1.0 / vp - 1.0 / vq[i]);
                acc[offset + len + i] += tau * d_var * jac[i];
            }
        }
    }
    Ok(())
}

/// -sum_n y_n ln(probs_n), probs clamped at `PROB_CLAMP`.
pub fn cross_entropy(y: &Tensor, probs: &Tensor) -> Result<f64> {
    check_one_hot(y)?;
    y.same_shape(probs)?;
    Ok(y
        .data()
        .iter()
        .zip(probs.data())
        .map(|(&yn, &pn)| -yn * pn.max(PROB_CLAMP).ln())
        .sum())
}

/// Gradient of `cross_entropy` with respect to the probabilities.
pub fn cross_entropy_backward(y: &Tensor, probs: &Tensor) -> Result<Tensor> {
    check_one_hot(y)?;
    y.same_shape(probs)?;
    Tensor::new(
        y.shape().to_vec(),
        y.data()
            .iter()
            .zip(probs.data())
            .map(|(&yn, &pn)| {
                let p = pn.max(PROB_CLAMP);
                if pn > PROB_CLAMP { -yn / p } else { 0.0 }
            })
            .collect(),
    )
}
