//! Temporal action localization on 3D skeleton streams.
//!
//! The crate covers the full pipeline: skeleton preprocessing and synthetic
//! data generation, a reverse-mode autodiff engine, a detection-style
//! transformer with deformable temporal attention, set-prediction losses with
//! optimal bipartite matching, an Adam trainer, and the mAP evaluation
//! toolkit. Everything is deterministic given a seed — f64 throughout, no
//! hidden threading, no hash-ordering in numeric paths.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod matching;
pub mod model;
pub mod trainer;

pub use autodiff::{grad_check, GradCheckReport, Tape, Tensor, Var};
pub use data::{Dataset, LabeledSpan, MotionSequence, SnippetTensor};
pub use error::{Error, Result};
pub use evaluation::{Detection, EvalReport};
pub use matching::{Assignment, ClassStats, CostMatrix, LossBreakdown, MatchWeights};
pub use model::{ModelConfig, ModelParams, RawPredictionSet};
pub use trainer::{fit, Checkpoint, FitResult, TrainConfig};
