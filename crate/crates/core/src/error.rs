use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected shape {expected:?}, got {got:?}")]
    BadShape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward was already run on this tape; build a fresh tape per forward pass")]
    BackwardAlreadyRun,

    #[error("loss is detached: no differentiable leaf feeds into it")]
    DetachedLoss,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{file}:{line}: {msg}")]
    ConfigLine {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("dataset id {id} out of range (have {num} datasets)")]
    DatasetIdOutOfRange { id: usize, num: usize },

    #[error("batch size {batch} is not divisible by the number of datasets {num}")]
    BatchNotDivisible { batch: usize, num: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("pose out of the configured range: {0}")]
    PoseOutOfRange(String),

    #[error("bad parameter file: {0}")]
    BadParamFile(String),

    #[error("missing path: {0}")]
    MissingPath(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
