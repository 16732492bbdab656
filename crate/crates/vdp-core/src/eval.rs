//! Accuracy evaluation, ACC/BWT metrics, and the Monte-Carlo moment
//! oracle that validates the analytic propagation.

use crate::error::{Result, VdpError};
use crate::gaussian::GaussianTensor;
use crate::network::{MultiHeadNetwork, NetworkMode};
use crate::data::TaskDataset;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Which label space a head predicts into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSpace {
    /// Head-local indices via the task's class map (multi-head regimes).
    Local,
    /// Original dataset labels (single-head regime).
    Original,
}

/// R[i][t] = test accuracy on task i after training through task t;
/// defined only for i <= t.
#[derive(Debug, Clone)]
pub struct ResultsMatrix {
    n_tasks: usize,
    entries: Vec<Option<f64>>,
}

impl ResultsMatrix {
    pub fn new(n_tasks: usize) -> Self {
        Self { n_tasks, entries: vec![None; n_tasks * n_tasks] }
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn set(&mut self, task: usize, after: usize, accuracy: f64) {
        assert!(task <= after && after < self.n_tasks);
        assert!((0.0..=1.0).contains(&accuracy));
        self.entries[task * self.n_tasks + after] = Some(accuracy);
    }

    pub fn get(&self, task: usize, after: usize) -> Option<f64> {
        self.entries.get(task * self.n_tasks + after).copied().flatten()
    }

    /// Row-major dump with NaN in undefined cells, for serialization.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_tasks)
            .map(|i| {
                (0..self.n_tasks)
                    .map(|t| self.get(i, t).unwrap_or(f64::NAN))
                    .collect()
            })
            .collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut m = Self::new(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(VdpError::InvalidConfig("ragged results matrix".into()));
            }
            for (t, &v) in row.iter().enumerate() {
                if !v.is_nan() {
                    m.set(i, t, v);
                }
            }
        }
        Ok(m)
    }
}

/// ACC = (1/t) sum_i R[i][t]; BWT = (1/t) sum_i (R[i][t] - R[i][i]),
/// both as fractions in [0,1] / [-1,1]. Requires a fully filled final
/// column.
pub fn compute_metrics(r: &ResultsMatrix) -> Result<(f64, f64)> {
    let t = r.n_tasks();
    let last = t - 1;
    let mut acc = 0.0;
    let mut bwt = 0.0;
    for i in 0..t {
        let final_acc = r
            .get(i, last)
            .ok_or(VdpError::PartialResults { filled: i, needed: t })?;
        let own_acc = r
            .get(i, i)
            .ok_or(VdpError::PartialResults { filled: i, needed: t })?;
        acc += final_acc;
        bwt += final_acc - own_acc;
    }
    Ok((acc / t as f64, bwt / t as f64))
}

/// Fraction of test samples whose predictive-mean argmax matches the
/// label. Uses means only; predictive variances never affect accuracy.
pub fn evaluate_accuracy(
    net: &MultiHeadNetwork,
    task: &TaskDataset,
    head: usize,
    labels: LabelSpace,
) -> Result<f64> {
    net.head(head)?;
    let n = task.test.len();
    if n == 0 {
        return Err(VdpError::InvalidConfig("empty test set".into()));
    }
    let mut correct = 0usize;
    for i in 0..n {
        let x = task.test.input(i);
        let probs = match net.mode {
            NetworkMode::Variational => net.forward(&x, head)?.output.mean,
            NetworkMode::Deterministic => net.det_forward(&x, head)?.probs,
        };
        let pred = argmax(probs.data());
        let target = match labels {
            LabelSpace::Local => task.local_label(task.test.label(i)),
            LabelSpace::Original => task.test.label(i) as usize,
        };
        if pred == target {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Empirical output moments from `n_samples` full weight realizations,
/// plus standard errors of the mean estimates.
pub struct McMoments {
    pub moments: GaussianTensor,
    pub std_errors: Tensor,
    pub n_samples: usize,
}

/// Draw weight realizations from the current (mu, softplus(rho)) factors,
/// run the deterministic forward per draw, and return the empirical mean
/// and variance of the softmax outputs.
pub fn mc_oracle_moments(
    net: &MultiHeadNetwork,
    x: &Tensor,
    task: usize,
    n_samples: usize,
    rng: &mut SeededRng,
) -> Result<McMoments> {
    if net.mode != NetworkMode::Variational {
        return Err(VdpError::RequiresVariationalMode);
    }
    let first = net.sampled_forward(x, task, rng)?;
    let n_out = first.len();
    // Welford's online moments: stable even when all draws coincide.
    let mut mean = vec![0.0; n_out];
    let mut m2 = vec![0.0; n_out];
    let mut count = 0.0;
    let mut absorb = |probs: &Tensor| {
        count += 1.0;
        for (i, &p) in probs.data().iter().enumerate() {
            let delta = p - mean[i];
            mean[i] += delta / count;
            m2[i] += delta * (p - mean[i]);
        }
    };
    absorb(&first);
    for _ in 1..n_samples {
        let probs = net.sampled_forward(x, task, rng)?;
        absorb(&probs);
    }
    let n = n_samples as f64;
    let variance: Vec<f64> = m2.iter().map(|&s| s / (n - 1.0).max(1.0)).collect();
    let std_errors: Vec<f64> = variance.iter().map(|&v| (v / n).sqrt()).collect();
    Ok(McMoments {
        moments: GaussianTensor::new(Tensor::from_vec(mean), Tensor::from_vec(variance))?,
        std_errors: Tensor::from_vec(std_errors),
        n_samples,
    })
}
