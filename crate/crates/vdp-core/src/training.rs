//! Optimization loop: Adam, plateau learning-rate scheduling, minibatch
//! orchestration over (sample, task) pairs, and the finite-difference
//! gradient check.
//!
//! Batch gradients are accumulated per fixed-size chunk and the chunk
//! partials are summed in chunk order, so the rayon and serial paths
//! produce bit-identical results and reruns are deterministic.

use std::cell::RefCell;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Result, VdpError};
use crate::network::{MultiHeadNetwork, NetworkMode, Scope, ScopeLayout};
use crate::numerics::finite_difference_gradient;
use crate::objective::{
    cross_entropy, cross_entropy_backward, gaussian_nll, gaussian_nll_backward, kl_diag_gauss,
    kl_gradients,
};
use crate::prior::PriorSnapshot;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

const CHUNK: usize = 32;

/// One training sample: input, one-hot target in the head-local label
/// space, and the head it belongs to.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub x: Tensor,
    pub y: Tensor,
    pub task: usize,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub seed: u64,
    pub tau: f64,
    pub freeze_shared: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            lr0: 1e-3,
            seed: 0,
            tau: 0.0,
            freeze_shared: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Standard Adam update with bias correction.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(VdpError::DimensionMismatch(format!(
                "adam state holds {} coords, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(VdpError::NonFinite(format!(
                "gradient coordinate {i} at adam step {}",
                self.step + 1
            )));
        }
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Plateau scheduler
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    pub rel_threshold: f64,
    pub lr: f64,
    best_loss: Option<f64>,
    stale_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr0: f64) -> Self {
        Self {
            patience: 3,
            factor: 0.1,
            min_lr: 1e-6,
            rel_threshold: 1e-4,
            lr: lr0,
            best_loss: None,
            stale_epochs: 0,
        }
    }

    /// Record an epoch loss; reduce lr tenfold after `patience` epochs
    /// without a relative improvement of `rel_threshold`.
    pub fn step(&mut self, epoch_loss: f64) -> f64 {
        match self.best_loss {
            None => {
                self.best_loss = Some(epoch_loss);
            }
            Some(best) => {
                let improved = epoch_loss < best - self.rel_threshold * best.abs();
                if improved {
                    self.best_loss = Some(epoch_loss);
                    self.stale_epochs = 0;
                } else {
                    self.stale_epochs += 1;
                    if self.stale_epochs >= self.patience {
                        self.lr = (self.lr * self.factor).max(self.min_lr);
                        self.stale_epochs = 0;
                    }
                }
            }
        }
        self.lr
    }
}

// ---------------------------------------------------------------------------
// Batch gradients
// ---------------------------------------------------------------------------

/// Forward + backward for one sample; adds the per-sample gradient of the
/// data term into `acc` and returns the per-sample loss.
fn sample_loss_grad(
    net: &MultiHeadNetwork,
    sample: &TrainSample,
    layout: &ScopeLayout,
    acc: &mut [f64],
) -> Result<f64> {
    match net.mode {
        NetworkMode::Variational => {
            let trace = net.forward(&sample.x, sample.task)?;
            let nll = gaussian_nll(&sample.y, &trace.output)?;
            let d = gaussian_nll_backward(&sample.y, &trace.output)?;
            net.backward(&trace, &d, layout, acc)?;
            Ok(nll)
        }
        NetworkMode::Deterministic => {
            let trace = net.det_forward(&sample.x, sample.task)?;
            let ce = cross_entropy(&sample.y, &trace.probs)?;
            let d = cross_entropy_backward(&sample.y, &trace.probs)?;
            net.det_backward(&trace, &d, layout, acc)?;
            Ok(ce)
        }
    }
}

fn chunk_grad(
    net: &MultiHeadNetwork,
    chunk: &[&TrainSample],
    layout: &ScopeLayout,
) -> Result<(f64, Vec<f64>)> {
    let mut acc = vec![0.0; layout.len()];
    let mut loss = 0.0;
    for s in chunk {
        loss += sample_loss_grad(net, s, layout, &mut acc)?;
    }
    Ok((loss, acc))
}

fn reduce_chunks(
    chunks: Vec<Result<(f64, Vec<f64>)>>,
    n_samples: usize,
    layout: &ScopeLayout,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; layout.len()];
    let mut loss = 0.0;
    for c in chunks {
        let (l, g) = c?;
        loss += l;
        for (dst, src) in grad.iter_mut().zip(&g) {
            *dst += src;
        }
    }
    let scale = 1.0 / n_samples as f64;
    loss *= scale;
    for g in &mut grad {
        *g *= scale;
    }
    Ok((loss, grad))
}

/// Mean data-term loss and its gradient over a batch, serial reduction.
pub fn batch_gradient_serial(
    net: &MultiHeadNetwork,
    batch: &[&TrainSample],
    layout: &ScopeLayout,
) -> Result<(f64, Vec<f64>)> {
    let chunks: Vec<Result<(f64, Vec<f64>)>> = batch
        .chunks(CHUNK)
        .map(|c| chunk_grad(net, c, layout))
        .collect();
    reduce_chunks(chunks, batch.len(), layout)
}

/// Mean data-term loss and its gradient over a batch. With the
/// `parallel` feature, chunks are evaluated on the rayon pool; the chunk
/// partials are always combined in chunk order, so the result is
/// bit-identical to `batch_gradient_serial`.
#[cfg(feature = "parallel")]
pub fn batch_gradient(
    net: &MultiHeadNetwork,
    batch: &[&TrainSample],
    layout: &ScopeLayout,
) -> Result<(f64, Vec<f64>)> {
    let chunks: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_chunks(CHUNK)
        .map(|c| chunk_grad(net, c, layout))
        .collect();
    reduce_chunks(chunks, batch.len(), layout)
}

#[cfg(not(feature = "parallel"))]
pub fn batch_gradient(
    net: &MultiHeadNetwork,
    batch: &[&TrainSample],
    layout: &ScopeLayout,
) -> Result<(f64, Vec<f64>)> {
    batch_gradient_serial(net, batch, layout)
}

/// Mean data-term loss of a batch (no gradients).
pub fn batch_loss(net: &MultiHeadNetwork, batch: &[&TrainSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in batch {
        total += match net.mode {
            NetworkMode::Variational => {
                let trace = net.forward(&s.x, s.task)?;
                gaussian_nll(&s.y, &trace.output)?
            }
            NetworkMode::Deterministic => {
                let trace = net.det_forward(&s.x, s.task)?;
                cross_entropy(&s.y, &trace.probs)?
            }
        };
    }
    Ok(total / batch.len() as f64)
}

// ---------------------------------------------------------------------------
// Task training loop
// ---------------------------------------------------------------------------

/// Minimize mean NLL + tau * KL(q || prior) over shuffled minibatches.
/// Returns the per-epoch mean total loss. Deterministic given
/// (seed, config, data).
pub fn train_task(
    net: &mut MultiHeadNetwork,
    samples: &[TrainSample],
    prior: &PriorSnapshot,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(VdpError::InvalidConfig("empty training set".into()));
    }
    let mut heads: Vec<usize> = samples.iter().map(|s| s.task).collect();
    heads.sort_unstable();
    heads.dedup();
    let scope = Scope { trunk: !cfg.freeze_shared, heads };
    let layout = net.scope_layout(&scope)?;
    let mut params = net.flatten(&layout)?;
    let mut adam = AdamState::new(params.len(), cfg.lr0);
    let mut sched = PlateauScheduler::new(cfg.lr0);
    let mut shuffle_rng = SeededRng::new(cfg.seed);
    let use_kl = net.mode == NetworkMode::Variational && cfg.tau > 0.0;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainSample> = batch_idx.iter().map(|&i| &samples[i]).collect();
            let (nll, mut grad) = batch_gradient(net, &batch, &layout).map_err(|e| {
                VdpError::InvalidConfig(format!("epoch {epoch} batch {n_batches}: {e}"))
            })?;
            let mut total = nll;
            if use_kl {
                kl_gradients(net, &scope, prior, &layout, cfg.tau, &mut grad)?;
                total += cfg.tau * kl_diag_gauss(net, &scope, prior)?;
            }
            if !total.is_finite() {
                return Err(VdpError::NonFinite(format!(
                    "loss at epoch {epoch} batch {n_batches}"
                )));
            }
            adam.lr = sched.lr;
            adam.step(&mut params, &grad)?;
            net.load_flat(&layout, &params)?;
            epoch_loss += total;
            n_batches += 1;
        }
        let mean_loss = epoch_loss / n_batches as f64;
        history.push(mean_loss);
        sched.step(mean_loss);
    }
    Ok(history)
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

/// Compare analytic gradients of mean data loss + tau * KL against
/// central finite differences (h = 1e-5). Returns the max relative error
/// over all coordinates, with an absolute floor of 1e-2 times the
/// gradient's max magnitude so finite-difference noise on near-zero
/// coordinates does not dominate.
pub fn gradient_check(
    net: &MultiHeadNetwork,
    batch: &[&TrainSample],
    tau: f64,
    prior: &PriorSnapshot,
    scope: &Scope,
) -> Result<f64> {
    let layout = net.scope_layout(scope)?;
    let params = net.flatten(&layout)?;
    let use_kl = net.mode == NetworkMode::Variational && tau > 0.0;

    // Analytic side.
    let (_, mut analytic) = batch_gradient_serial(net, batch, &layout)?;
    if use_kl {
        kl_gradients(net, scope, prior, &layout, tau, &mut analytic)?;
    }

    // Finite-difference side on a scratch clone of the network.
    let scratch = RefCell::new(clone_via_checkpoint(net)?);
    let objective = |p: &Tensor| -> f64 {
        let mut n = scratch.borrow_mut();
        n.load_flat(&layout, p.data()).expect("layout mismatch");
        let mut total = batch_loss(&n, batch).expect("forward failure in probe");
        if use_kl {
            total += tau * kl_diag_gauss(&n, scope, prior).expect("kl failure in probe");
        }
        total
    };
    let numeric = finite_difference_gradient(objective, &Tensor::from_vec(params), 1e-5)?;

    let scale = analytic
        .iter()
        .fold(0.0f64, |m, &g| m.max(g.abs()))
        .max(1e-8);
    let mut max_rel = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric.data()) {
        let denom = a.abs().max(n.abs()).max(1e-2 * scale);
        max_rel = max_rel.max((a - n).abs() / denom);
    }
    Ok(max_rel)
}

/// Deep copy of a network through its checkpoint serialization.
pub fn clone_via_checkpoint(net: &MultiHeadNetwork) -> Result<MultiHeadNetwork> {
    let mut buf = Vec::new();
    net.save(&mut buf)?;
    MultiHeadNetwork::load(&mut buf.as_slice())
}
