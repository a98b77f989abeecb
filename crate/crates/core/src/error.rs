use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge {index} has endpoint {node} outside 0..{node_count}")]
    EdgeOutOfRange {
        index: usize,
        node: usize,
        node_count: usize,
    },

    #[error("graph must have at least one node")]
    EmptyGraph,

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward already ran on this tape")]
    BackwardTwice,

    #[error("loss must be a scalar produced by this tape")]
    NotScalar,

    #[error("cross-entropy over an unlabeled batch (empty mask)")]
    EmptyBatch,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value encountered: {0}")]
    Divergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot shrink classifier head from {current} to {requested} classes")]
    ShrinkHead { current: usize, requested: usize },

    #[error("parameter vector length {got} does not match model ({expected})")]
    FlatLength { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("performance matrix incomplete: entry ({i}, {j}) missing")]
    Incomplete { i: usize, j: usize },

    #[error("average forgetting undefined for a single task")]
    SingleTask,

    #[error("pattern {0} has no examples")]
    MissingPattern(String),

    #[error("node {node} has time step {step} outside 1..=49")]
    TimeStep { node: usize, step: i64 },

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("unknown laundering attempt type {0:?}")]
    UnknownPattern(String),

    #[error("infeasible synthetic pattern: {0}")]
    Infeasible(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
