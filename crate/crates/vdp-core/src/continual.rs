//! Task-sequence orchestration: prior compression plus the baseline
//! training regimes (fine-tuning, feature extraction, joint training,
//! single-head).
//!
//! Prior compression trains task 0 against a standard-normal prior with
//! weight tau0, then anchors every later task's KL term to the previous
//! task's posterior (trunk) with weight tau1; each new head is anchored
//! to a standard normal.

use crate::data::TaskDataset;
use crate::error::{Result, VdpError};
use crate::eval::{evaluate_accuracy, LabelSpace, ResultsMatrix};
use crate::network::{MultiHeadNetwork, NetworkMode, Scope};
use crate::prior::PriorSnapshot;
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::training::{train_task, TrainConfig, TrainSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    VdpPc,
    VdpFt,
    VdpFe,
    VdpJt,
    DetSh,
    DetFt,
    DetFe,
    DetJt,
}

impl Regime {
    pub fn mode(self) -> NetworkMode {
        match self {
            Regime::VdpPc | Regime::VdpFt | Regime::VdpFe | Regime::VdpJt => {
                NetworkMode::Variational
            }
            _ => NetworkMode::Deterministic,
        }
    }

    pub fn single_head(self) -> bool {
        self == Regime::DetSh
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::VdpPc => "vdp-pc",
            Regime::VdpFt => "vdp-ft",
            Regime::VdpFe => "vdp-fe",
            Regime::VdpJt => "vdp-jt",
            Regime::DetSh => "det-sh",
            Regime::DetFt => "det-ft",
            Regime::DetFe => "det-fe",
            Regime::DetJt => "det-jt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "vdp-pc" => Regime::VdpPc,
            "vdp-ft" => Regime::VdpFt,
            "vdp-fe" => Regime::VdpFe,
            "vdp-jt" => Regime::VdpJt,
            "det-sh" => Regime::DetSh,
            "det-ft" => Regime::DetFt,
            "det-fe" => Regime::DetFe,
            "det-jt" => Regime::DetJt,
            other => return Err(VdpError::InvalidConfig(format!("unknown regime '{other}'"))),
        })
    }
}

/// Network architecture selector, resolved per dataset by the CLI.
#[derive(Debug, Clone)]
pub enum Architecture {
    Mlp { input: usize, hidden: Vec<usize> },
    Conv32,
}

impl Architecture {
    pub fn build(&self, mode: NetworkMode, pi: f64, rng: &mut SeededRng) -> Result<MultiHeadNetwork> {
        match self {
            Architecture::Mlp { input, hidden } => {
                Ok(MultiHeadNetwork::mlp(*input, hidden, mode, pi, rng))
            }
            Architecture::Conv32 => MultiHeadNetwork::conv_trunk_32(mode, pi, rng),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContinualConfig {
    pub regime: Regime,
    pub arch: Architecture,
    /// KL weight for the first task.
    pub tau0: f64,
    /// KL weight for subsequent tasks.
    pub tau1: f64,
    /// Mean of the rho initialization distribution.
    pub pi: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
}

impl ContinualConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau0 < 0.0 || self.tau1 < 0.0 {
            return Err(VdpError::InvalidConfig("tau must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(VdpError::InvalidConfig("epochs and batch size must be positive".into()));
        }
        if self.lr0 <= 0.0 {
            return Err(VdpError::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

pub struct ContinualOutcome {
    pub results: ResultsMatrix,
    pub loss_histories: Vec<Vec<f64>>,
    pub net: MultiHeadNetwork,
    /// Serialized checkpoint captured after each task.
    pub checkpoints: Vec<Vec<u8>>,
}

pub fn one_hot(n_classes: usize, class: usize) -> Tensor {
    let mut v = vec![0.0; n_classes];
    v[class] = 1.0;
    Tensor::from_vec(v)
}

fn task_train_samples(
    task: &TaskDataset,
    head: usize,
    labels: LabelSpace,
    n_classes: usize,
) -> Vec<TrainSample> {
    (0..task.train.len())
        .map(|i| {
            let orig = task.train.label(i);
            let class = match labels {
                LabelSpace::Local => task.local_label(orig),
                LabelSpace::Original => orig as usize,
            };
            TrainSample {
                x: task.train.input(i),
                y: one_hot(n_classes, class),
                task: head,
            }
        })
        .collect()
}

fn derived_seed(seed: u64, task: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(task as u64)
        .rotate_left(17)
}

/// Run a full task sequence under one regime; fills R[i][t] for all
/// i <= t and captures a checkpoint after every task.
pub fn run_continual(cfg: &ContinualConfig, tasks: &[TaskDataset]) -> Result<ContinualOutcome> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(VdpError::InvalidConfig("empty task sequence".into()));
    }
    let mode = cfg.regime.mode();
    let mut init_rng = SeededRng::new(cfg.seed);
    let mut net = cfg.arch.build(mode, cfg.pi, &mut init_rng)?;

    let label_space = if cfg.regime.single_head() {
        LabelSpace::Original
    } else {
        LabelSpace::Local
    };
    let global_classes = tasks
        .iter()
        .flat_map(|t| t.class_map.keys())
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(0);

    if cfg.regime.single_head() {
        let mut head_rng = init_rng.derive(1_000);
        net.attach_head(0, global_classes, cfg.pi, &mut head_rng)?;
    }

    let variational = mode == NetworkMode::Variational;
    let mut results = ResultsMatrix::new(tasks.len());
    let mut loss_histories = Vec::with_capacity(tasks.len());
    let mut checkpoints = Vec::with_capacity(tasks.len());
    // Trunk anchor carried across tasks under prior compression.
    let mut trunk_prior: Option<PriorSnapshot> = None;

    for (t, task) in tasks.iter().enumerate() {
        let head = if cfg.regime.single_head() { 0 } else { t };
        if !cfg.regime.single_head() {
            let mut head_rng = init_rng.derive(1_000 + t as u64);
            net.attach_head(t, task.n_classes, cfg.pi, &mut head_rng)?;
        }

        let freeze_shared = matches!(cfg.regime, Regime::VdpFe | Regime::DetFe) && t > 0;
        let joint = matches!(cfg.regime, Regime::VdpJt | Regime::DetJt);

        let samples: Vec<TrainSample> = if joint {
            tasks[..=t]
                .iter()
                .enumerate()
                .flat_map(|(i, prev)| {
                    let n = if cfg.regime.single_head() { global_classes } else { prev.n_classes };
                    task_train_samples(prev, i, label_space, n)
                })
                .collect()
        } else {
            let n = if cfg.regime.single_head() { global_classes } else { task.n_classes };
            task_train_samples(task, head, label_space, n)
        };

        let (tau, prior) = if !variational {
            (0.0, PriorSnapshot::empty())
        } else {
            let scope = if freeze_shared {
                Scope::head_only(head)
            } else if joint {
                Scope { trunk: true, heads: (0..=t).collect() }
            } else {
                Scope::task(head)
            };
            match cfg.regime {
                Regime::VdpPc => {
                    if t == 0 {
                        (cfg.tau0, PriorSnapshot::standard_normal(&net, &scope)?)
                    } else {
                        // Trunk anchored to the previous posterior, the
                        // fresh head to a standard normal.
                        let mut prior = trunk_prior.clone().expect("snapshot exists after task 0");
                        prior.extend(PriorSnapshot::standard_normal(
                            &net,
                            &Scope::head_only(head),
                        )?);
                        (cfg.tau1, prior)
                    }
                }
                // Fixed standard-normal prior, never updated: isolates the
                // effect of prior compression.
                Regime::VdpFt | Regime::VdpJt => {
                    (cfg.tau0, PriorSnapshot::standard_normal(&net, &scope)?)
                }
                Regime::VdpFe => {
                    let tau = if t == 0 { cfg.tau0 } else { cfg.tau1 };
                    (tau, PriorSnapshot::standard_normal(&net, &scope)?)
                }
                _ => unreachable!(),
            }
        };

        let train_cfg = TrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr0: cfg.lr0,
            seed: derived_seed(cfg.seed, t),
            tau,
            freeze_shared,
        };
        let history = train_task(&mut net, &samples, &prior, &train_cfg)?;
        loss_histories.push(history);

        if variational && cfg.regime == Regime::VdpPc {
            trunk_prior = Some(PriorSnapshot::of_posterior(
                &net,
                &Scope { trunk: true, heads: vec![] },
            )?);
        }

        for (i, prev) in tasks.iter().enumerate().take(t + 1) {
            let eval_head = if cfg.regime.single_head() { 0 } else { i };
            let acc = evaluate_accuracy(&net, prev, eval_head, label_space)?;
            results.set(i, t, acc);
        }

        let mut buf = Vec::new();
        net.save(&mut buf)?;
        checkpoints.push(buf);
    }

    Ok(ContinualOutcome { results, loss_histories, net, checkpoints })
}
