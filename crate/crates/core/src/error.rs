use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("degenerate fan: fan_in={fan_in}, fan_out={fan_out}")]
    DegenerateFan { fan_in: usize, fan_out: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("incompatible overrides: {0}")]
    IncompatibleOverride(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric overflow in layer {index} ({layer})")]
    NumericOverflow { index: usize, layer: String },

    #[error("non-finite feature at example {example}, column {column} (base seed {base_seed})")]
    NonFiniteFeature {
        example: usize,
        column: usize,
        base_seed: u64,
    },

    #[error("feature extraction needs a scalar head, got output dimension {0}")]
    HeadDimension(usize),

    #[error("angle undefined for zero-norm input")]
    UndefinedAngle,

    #[error("cosine undefined: weight row of class {class} has zero norm")]
    UndefinedCosine { class: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite loss during optimization")]
    NonFiniteLoss,

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("corrupt file {path}: expected {expected} bytes, found {actual}")]
    CorruptFile {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("class {class} has {available} examples, {requested} requested")]
    InsufficientExamples {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("corrupt cache: {0}")]
    CorruptCache(String),

    #[error("stale cache: written for dataset {found:#018x}, current dataset is {expected:#018x}")]
    StaleCache { expected: u64, found: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
