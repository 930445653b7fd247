//! Crate-wide error type.
//!
//! Everything that can fail in the pipeline funnels into [`Error`]. The
//! variants are deliberately specific: a shape mismatch names both shapes, a
//! non-finite value names the operation that produced it, a bad config names
//! the field. Call sites should never have to guess what went wrong.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- tensor / autodiff ----
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("shape {shape:?} does not hold {expected} elements (got {actual})")]
    ShapeElementCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange { axis: usize, shape: Vec<usize> },

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: String },

    #[error("non-finite gradient produced while differentiating `{op}`")]
    NonFiniteGradient { op: String },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward was already run on this tape; rebuild the graph before differentiating again")]
    TapeConsumed,

    #[error("variable #{id} does not belong to this tape (tape has {len} nodes)")]
    UnknownVariable { id: usize, len: usize },

    // ---- data ----
    #[error("sequence `{id}`: {problem}")]
    InvalidSequence { id: String, problem: String },

    #[error("dataset: {0}")]
    InvalidDataset(String),

    #[error("sequence `{id}` has {frames} frames but a snippet needs {needed}")]
    SequenceTooShort {
        id: String,
        frames: usize,
        needed: usize,
    },

    #[error("cannot generate {classes} motif classes: only {available} non-anchor joints available")]
    TooManyClasses { classes: usize, available: usize },

    #[error("cannot place {requested} spans of ~{span_frames} frames in {total_frames} frames without triple overlap")]
    SpanPlacement {
        requested: usize,
        span_frames: usize,
        total_frames: usize,
    },

    // ---- config ----
    #[error("invalid config: {field}: {problem}")]
    InvalidConfig {
        field: &'static str,
        problem: String,
    },

    // ---- matching / losses ----
    #[error("degenerate span [{start}, {end}]: start must be strictly less than end")]
    DegenerateSpan { start: f64, end: f64 },

    #[error("cost matrix must be square and finite: {0}")]
    InvalidCostMatrix(String),

    #[error("{gt} ground-truth spans exceed the {queries} available queries; raise the query count")]
    TooManySpans { gt: usize, queries: usize },

    #[error("class id {class} out of range (have {classes} classes)")]
    ClassOutOfRange { class: usize, classes: usize },

    // ---- evaluation ----
    #[error("invalid detection for `{seq}`: {problem}")]
    InvalidDetection { seq: String, problem: String },

    #[error("evaluation: {0}")]
    InvalidEvaluation(String),

    // ---- checkpoints ----
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint was written by an incompatible version (magic/version {found}, expected {expected})")]
    CheckpointVersion { found: String, expected: String },

    // ---- io ----
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("training diverged at epoch {epoch}: {problem}")]
    Diverged { epoch: usize, problem: String },
}

impl Error {
    /// Attach a path to an io error (the bare `std::io::Error` never says
    /// which file it was).
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Attach a path to a serde error.
    pub fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
