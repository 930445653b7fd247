//! End-to-end training: Adam, the epoch loop, and checkpointing.

mod adam;
mod checkpoint;
mod fit;

pub use adam::{adam_step, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use fit::{fit, log_to_csv, FitResult, LogRow};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matching::{ClassStats, MatchWeights};

/// Optimization hyperparameters. `seed` drives only the shuffle order; the
/// model's own seed lives in its config.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global-norm gradient clip; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    pub lambda_iou: f64,
    pub lambda_l1: f64,
    pub cb_beta: f64,
    pub cb_gamma: f64,
    /// Batch elements evaluated in parallel; 1 = fully serial. Gradients are
    /// reduced in element order either way, so results are identical.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 4e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 100,
            batch_size: 4,
            grad_clip_norm: Some(0.1),
            seed: 0,
            lambda_iou: 2.0,
            lambda_l1: 5.0,
            cb_beta: 0.99,
            cb_gamma: 2.0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig {
                field: "learning_rate",
                problem: format!("{} must be positive", self.learning_rate),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig {
                field: "batch_size",
                problem: "must be at least 1".into(),
            });
        }
        if self.threads == 0 {
            return Err(Error::InvalidConfig {
                field: "threads",
                problem: "must be at least 1".into(),
            });
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidConfig {
                    field: "grad_clip_norm",
                    problem: format!("{c} must be positive when set"),
                });
            }
        }
        Ok(())
    }

    pub fn match_weights(&self) -> MatchWeights {
        MatchWeights {
            lambda_iou: self.lambda_iou,
            lambda_l1: self.lambda_l1,
        }
    }
}

/// Count ground-truth spans per class over a training set and derive the
/// class-balanced statistics the loss needs.
///
/// The sentinel (no-action) slot is counted as the number of query
/// assignments left over after real spans are matched, summed over the set.
/// Classes that never occur get count 1 (the weight formula needs positive
/// counts); their indices come back in the second slot so callers can warn.
pub fn class_counts(
    train: &Dataset,
    num_classes: usize,
    num_queries: usize,
    cb_beta: f64,
    cb_gamma: f64,
) -> Result<(ClassStats, Vec<usize>)> {
    if train.sequences.is_empty() {
        return Err(Error::InvalidConfig {
            field: "train",
            problem: "training set has no sequences".into(),
        });
    }
    let mut counts = vec![0u64; num_classes + 1];
    for seq in &train.sequences {
        for span in &seq.spans {
            if span.class_id >= num_classes {
                return Err(Error::ClassOutOfRange {
                    class: span.class_id,
                    classes: num_classes,
                });
            }
            counts[span.class_id] += 1;
        }
        let real = seq.spans.len().min(num_queries) as u64;
        counts[num_classes] += num_queries as u64 - real;
    }
    let mut missing = Vec::new();
    for (c, count) in counts.iter_mut().enumerate() {
        if *count == 0 {
            missing.push(c);
            *count = 1;
        }
    }
    let stats = ClassStats::new(counts, cb_beta, cb_gamma)?;
    Ok((stats, missing))
}
