use thiserror::Error;

#[derive(Debug, Error)]
pub enum VdpError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("kernel {kh}x{kw} larger than padded image {h}x{w}")]
    KernelTooLarge { kh: usize, kw: usize, h: usize, w: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("unknown task id {0}")]
    UnknownTask(usize),

    #[error("task {0} already has a head")]
    DuplicateTask(usize),

    #[error("backward called without a matching forward pass")]
    BackwardWithoutForward,

    #[error("label vector is not one-hot")]
    NotOneHot,

    #[error("operation requires a variational-mode network")]
    RequiresVariationalMode,

    #[error("operation requires a deterministic-mode network")]
    RequiresDeterministicMode,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad magic number in {path}: expected {expected:#010x}, got {got:#010x}")]
    BadMagic { path: String, expected: u32, got: u32 },

    #[error("truncated file {path}: expected {expected} bytes, got {got}")]
    Truncated { path: String, expected: usize, got: usize },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid label {label} (class count {n_classes})")]
    InvalidLabel { label: u8, n_classes: usize },

    #[error("file size {size} is not a multiple of record size {record}")]
    BadRecordSize { size: usize, record: usize },

    #[error("results matrix is only filled through task {filled} (need {needed})")]
    PartialResults { filled: usize, needed: usize },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VdpError>;
