//! Crate-wide error type.

use thiserror::Error;

/// A type alias for `Result<T, Error>`.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by any stage of the pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("voxel id {id} out of range (p = {p})")]
    VoxelOutOfRange { id: usize, p: usize },

    #[error("node id {id} out of range (q = {q})")]
    NodeOutOfRange { id: usize, q: usize },

    #[error("grid mask has no included cells")]
    EmptyMask,

    #[error("invalid grid dimensions {0}x{1}x{2}")]
    BadDims(usize, usize, usize),

    #[error("adjacency graph is disconnected: {components} components (expected a single connected volume)")]
    Disconnected { components: usize },

    #[error("dimension mismatch: {context} ({left} vs {right})")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("group structure is not laminar: groups {a} and {b} overlap without nesting")]
    NotLaminar { a: usize, b: usize },

    #[error("group structure does not cover index {index}")]
    UncoveredIndex { index: usize },

    #[error("group weight must be strictly positive, got {0}")]
    NonPositiveWeight(f64),

    #[error("dataset contains a non-finite entry at {context}")]
    NonFinite { context: &'static str },

    #[error("class label {label} out of range 1..={n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("objective became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("incompatible model spec: {0}")]
    BadModelSpec(String),

    #[error("invalid simulation spec: {0}")]
    BadSimulationSpec(String),

    #[error("invalid cross-validation plan: {0}")]
    BadPlan(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
