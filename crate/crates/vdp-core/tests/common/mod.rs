//! Shared helpers for the integration suites: synthetic clustered
//! datasets, task sequences, and small randomly shaped networks.

// Each test target links this module and uses a different subset of it.
#![allow(dead_code)]

use std::sync::Arc;

use vdp_core::continual::one_hot;
use vdp_core::data::{make_split_tasks, LabeledDataset, SplitKind, TaskDataset};
use vdp_core::network::{MultiHeadNetwork, NetworkMode, TrunkLayer};
use vdp_core::layers::{VdpConv, VdpLinear};
use vdp_core::training::TrainSample;
use vdp_core::{SeededRng, Tensor};

/// Ten Gaussian class clusters in `d` dimensions with well-separated
/// centers, so small networks can fit them in a handful of epochs. The
/// centers depend only on `seed`, so train and test splits share the
/// same geometry.
pub fn clustered_dataset(
    d: usize,
    per_class: usize,
    noise: f64,
    seed: u64,
    split: SplitKind,
) -> Arc<LabeledDataset> {
    let mut center_rng = SeededRng::new(seed);
    let centers: Vec<Vec<f64>> = (0..10)
        .map(|_| (0..d).map(|_| center_rng.next_f64()).collect())
        .collect();
    let mut sample_rng = center_rng.derive(match split {
        SplitKind::Train => 1,
        SplitKind::Test => 2,
    });
    let mut inputs = Vec::with_capacity(10 * per_class * d);
    let mut labels = Vec::with_capacity(10 * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            labels.push(c as u8);
            inputs.extend(center.iter().map(|&m| m + noise * sample_rng.next_normal()));
        }
    }
    Arc::new(LabeledDataset {
        inputs,
        input_shape: vec![d],
        labels,
        n_classes: 10,
        split,
    })
}

pub fn synthetic_split_tasks(n_tasks: usize, d: usize, per_class: usize, seed: u64) -> Vec<TaskDataset> {
    let train = clustered_dataset(d, per_class, 0.05, seed, SplitKind::Train);
    let test = clustered_dataset(d, (per_class / 3).max(4), 0.05, seed, SplitKind::Test);
    make_split_tasks(train, test, n_tasks).unwrap()
}

/// Random small MLP with one attached head, for gradient and oracle
/// checks. Always well under 500 parameters.
pub fn random_mlp(mode: NetworkMode, pi: f64, rng: &mut SeededRng) -> (MultiHeadNetwork, usize, usize) {
    let n_in = 3 + (rng.next_below(4) as usize);
    let hidden = 4 + (rng.next_below(5) as usize);
    let n_classes = 2 + (rng.next_below(3) as usize);
    let mut net = MultiHeadNetwork::mlp(n_in, &[hidden], mode, pi, rng);
    net.attach_head(0, n_classes, pi, rng).unwrap();
    (net, n_in, n_classes)
}

/// Small conv + linear trunk (1x6x6 input) with one head.
pub fn small_conv_net(mode: NetworkMode, pi: f64, rng: &mut SeededRng) -> (MultiHeadNetwork, usize, usize) {
    let conv = VdpConv::init(1, 6, 6, 2, 3, 3, 2, 1, pi, rng).unwrap();
    let flat: usize = conv.out_shape().iter().product();
    let trunk = vec![
        TrunkLayer::Conv(conv),
        TrunkLayer::Relu,
        TrunkLayer::Flatten,
        TrunkLayer::Linear(VdpLinear::init(flat, 5, pi, rng)),
        TrunkLayer::Relu,
    ];
    let mut net = MultiHeadNetwork::new(trunk, mode);
    net.attach_head(0, 3, pi, rng).unwrap();
    (net, 36, 3)
}

/// Random batch of labeled samples for a given input size and class count.
pub fn random_batch(n: usize, n_in: usize, n_classes: usize, rng: &mut SeededRng) -> Vec<TrainSample> {
    (0..n)
        .map(|_| TrainSample {
            x: Tensor::from_vec((0..n_in).map(|_| 0.5 * rng.next_normal()).collect()),
            y: one_hot(n_classes, rng.next_below(n_classes as u64) as usize),
            task: 0,
        })
        .collect()
}

/// Random conv-shaped batch (1x6x6 inputs).
pub fn random_conv_batch(n: usize, n_classes: usize, rng: &mut SeededRng) -> Vec<TrainSample> {
    (0..n)
        .map(|_| TrainSample {
            x: Tensor::new(vec![1, 6, 6], (0..36).map(|_| 0.5 * rng.next_normal()).collect()).unwrap(),
            y: one_hot(n_classes, rng.next_below(n_classes as u64) as usize),
            task: 0,
        })
        .collect()
}
