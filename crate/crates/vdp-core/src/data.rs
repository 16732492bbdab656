//! Dataset ingestion (MNIST IDX, CIFAR-10 binary) and construction of
//! Split and Permuted task sequences. Loaded datasets are immutable;
//! task views index into a shared dataset and apply pixel permutations
//! lazily, so no task sequence copies the underlying pixels.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use byteorder::{BigEndian, ReadBytesExt};

use crate::error::{Result, VdpError};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const MNIST_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const MNIST_LABEL_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 3073;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Test,
}

/// In-memory dataset: row-major sample-major pixel buffer in [0,1]
/// (unless standardized), original class labels.
#[derive(Debug)]
pub struct LabeledDataset {
    pub inputs: Vec<f64>,
    pub input_shape: Vec<usize>,
    pub labels: Vec<u8>,
    pub n_classes: usize,
    pub split: SplitKind,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn input(&self, i: usize) -> Tensor {
        let d = self.sample_len();
        Tensor::new(self.input_shape.clone(), self.inputs[i * d..(i + 1) * d].to_vec()).unwrap()
    }
}

/// Subset of a dataset seen through an optional pixel permutation.
#[derive(Debug, Clone)]
pub struct TaskView {
    data: Arc<LabeledDataset>,
    indices: Vec<u32>,
    permutation: Option<Arc<Vec<u32>>>,
}

impl TaskView {
    pub fn full(data: Arc<LabeledDataset>, permutation: Option<Arc<Vec<u32>>>) -> Self {
        let indices = (0..data.len() as u32).collect();
        Self { data, indices, permutation }
    }

    pub fn filtered(data: Arc<LabeledDataset>, keep: impl Fn(u8) -> bool) -> Self {
        let indices = data
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| keep(l))
            .map(|(i, _)| i as u32)
            .collect();
        Self { data, indices, permutation: None }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.data.input_shape
    }

    pub fn label(&self, i: usize) -> u8 {
        self.data.labels[self.indices[i] as usize]
    }

    pub fn input(&self, i: usize) -> Tensor {
        let x = self.data.input(self.indices[i] as usize);
        match &self.permutation {
            None => x,
            Some(perm) => {
                let src = x.data();
                let permuted: Vec<f64> = perm.iter().map(|&p| src[p as usize]).collect();
                Tensor::new(x.shape().to_vec(), permuted).unwrap()
            }
        }
    }
}

/// One task of a continual sequence: train/test views plus the label
/// remapping into the head-local space.
#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub task_id: usize,
    pub train: TaskView,
    pub test: TaskView,
    pub class_map: BTreeMap<u8, usize>,
    pub n_classes: usize,
}

impl TaskDataset {
    pub fn local_label(&self, original: u8) -> usize {
        self.class_map[&original]
    }
}

// ---------------------------------------------------------------------------
// MNIST IDX
// ---------------------------------------------------------------------------

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(VdpError::from)
}

/// Parse the IDX pair: big-endian magic and dimensions, unsigned byte
/// payload, pixels scaled to [0,1].
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path, split: SplitKind) -> Result<LabeledDataset> {
    let img_bytes = read_file(images_path)?;
    let mut r = img_bytes.as_slice();
    let magic = r.read_u32::<BigEndian>()?;
    if magic != MNIST_IMAGE_MAGIC {
        return Err(VdpError::BadMagic {
            path: images_path.display().to_string(),
            expected: MNIST_IMAGE_MAGIC,
            got: magic,
        });
    }
    let n = r.read_u32::<BigEndian>()? as usize;
    let h = r.read_u32::<BigEndian>()? as usize;
    let w = r.read_u32::<BigEndian>()? as usize;
    let expected = 16 + n * h * w;
    if img_bytes.len() != expected {
        return Err(VdpError::Truncated {
            path: images_path.display().to_string(),
            expected,
            got: img_bytes.len(),
        });
    }

    let lbl_bytes = read_file(labels_path)?;
    let mut r = lbl_bytes.as_slice();
    let magic = r.read_u32::<BigEndian>()?;
    if magic != MNIST_LABEL_MAGIC {
        return Err(VdpError::BadMagic {
            path: labels_path.display().to_string(),
            expected: MNIST_LABEL_MAGIC,
            got: magic,
        });
    }
    let n_labels = r.read_u32::<BigEndian>()? as usize;
    let expected = 8 + n_labels;
    if lbl_bytes.len() != expected {
        return Err(VdpError::Truncated {
            path: labels_path.display().to_string(),
            expected,
            got: lbl_bytes.len(),
        });
    }
    if n != n_labels {
        return Err(VdpError::CountMismatch { images: n, labels: n_labels });
    }

    let inputs: Vec<f64> = img_bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let labels = lbl_bytes[8..].to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l >= 10) {
        return Err(VdpError::InvalidLabel { label: bad, n_classes: 10 });
    }
    Ok(LabeledDataset {
        inputs,
        input_shape: vec![h * w],
        labels,
        n_classes: 10,
        split,
    })
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary
// ---------------------------------------------------------------------------

/// Parse CIFAR-10 binary batches: 3073-byte records (1 label byte +
/// 3072 channel-major pixels). Pixels scaled to [0,1]; optionally
/// standardized per channel over the loaded set.
pub fn load_cifar10(batch_paths: &[&Path], standardize: bool, split: SplitKind) -> Result<LabeledDataset> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let bytes = read_file(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(VdpError::BadRecordSize { size: bytes.len(), record: CIFAR_RECORD });
        }
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            let label = record[0];
            if label >= 10 {
                return Err(VdpError::InvalidLabel { label, n_classes: 10 });
            }
            labels.push(label);
            inputs.extend(record[1..].iter().map(|&b| b as f64 / 255.0));
        }
    }
    if standardize {
        let n = labels.len();
        let per_ch = 32 * 32;
        for c in 0..3 {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for s in 0..n {
                let base = s * 3 * per_ch + c * per_ch;
                for &v in &inputs[base..base + per_ch] {
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let count = (n * per_ch) as f64;
            let mean = sum / count;
            let sd = (sum_sq / count - mean * mean).max(1e-12).sqrt();
            for s in 0..n {
                let base = s * 3 * per_ch + c * per_ch;
                for v in &mut inputs[base..base + per_ch] {
                    *v = (*v - mean) / sd;
                }
            }
        }
    }
    Ok(LabeledDataset {
        inputs,
        input_shape: vec![3, 32, 32],
        labels,
        n_classes: 10,
        split,
    })
}

// ---------------------------------------------------------------------------
// Task sequences
// ---------------------------------------------------------------------------

/// Consecutive-label grouping: 5-Split pairs {0,1}..{8,9}; 2-Split
/// halves {0-4},{5-9}. Labels remap to 0..n_classes-1 per task.
pub fn make_split_tasks(
    train: Arc<LabeledDataset>,
    test: Arc<LabeledDataset>,
    n_tasks: usize,
) -> Result<Vec<TaskDataset>> {
    if n_tasks != 2 && n_tasks != 5 {
        return Err(VdpError::InvalidConfig(format!(
            "split task count must be 2 or 5, got {n_tasks}"
        )));
    }
    let per_task = 10 / n_tasks;
    let mut tasks = Vec::with_capacity(n_tasks);
    for t in 0..n_tasks {
        let lo = (t * per_task) as u8;
        let hi = lo + per_task as u8;
        let class_map: BTreeMap<u8, usize> =
            (lo..hi).enumerate().map(|(i, l)| (l, i)).collect();
        tasks.push(TaskDataset {
            task_id: t,
            train: TaskView::filtered(train.clone(), |l| l >= lo && l < hi),
            test: TaskView::filtered(test.clone(), |l| l >= lo && l < hi),
            class_map,
            n_classes: per_task,
        });
    }
    Ok(tasks)
}

/// One fixed seeded pixel permutation per task, applied to train and
/// test alike; every task keeps the full 10-class label space.
pub fn make_permuted_tasks(
    train: Arc<LabeledDataset>,
    test: Arc<LabeledDataset>,
    n_tasks: usize,
    seed: u64,
) -> Vec<TaskDataset> {
    let d = train.sample_len() as u32;
    let mut rng = SeededRng::new(seed);
    let identity_map: BTreeMap<u8, usize> = (0..10u8).map(|l| (l, l as usize)).collect();
    (0..n_tasks)
        .map(|t| {
            let mut perm: Vec<u32> = (0..d).collect();
            rng.shuffle(&mut perm);
            let perm = Arc::new(perm);
            TaskDataset {
                task_id: t,
                train: TaskView::full(train.clone(), Some(perm.clone())),
                test: TaskView::full(test.clone(), Some(perm)),
                class_map: identity_map.clone(),
                n_classes: 10,
            }
        })
        .collect()
}
