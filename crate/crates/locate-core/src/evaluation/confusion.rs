//! Class-agnostic confusion matrix over predicted spans.
//!
//! This diagnostic separates recognition error from localization error: each
//! detection is matched to the best-overlapping ground-truth span in its
//! sequence *regardless of class*, and the (ground-truth class, predicted
//! class) cell is incremented. A detection overlapping nothing falls into
//! the extra "unmatched" row; a ground-truth span that no detection covers
//! falls into the extra "unmatched" column.

use crate::error::{Error, Result};

use super::ap::GroundTruth;
use super::detect::Detection;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    /// `(C_cls+1) × (C_cls+1)`, row = ground-truth class (last = unmatched
    /// detection), column = predicted class (last = missed ground truth).
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Raw counts, `(C_cls+1) × (C_cls+1)`.
    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn at(&self, gt_class: usize, pred_class: usize) -> u64 {
        self.counts[gt_class][pred_class]
    }

    /// Column-normalized view: each predicted-class column divided by its
    /// total, answering "when the model says class x, what was really
    /// there?". Empty columns stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        let n = self.num_classes + 1;
        let mut out = vec![vec![0.0; n]; n];
        for col in 0..n {
            let total: u64 = (0..n).map(|row| self.counts[row][col]).sum();
            if total > 0 {
                for row in 0..n {
                    out[row][col] = self.counts[row][col] as f64 / total as f64;
                }
            }
        }
        out
    }
}

/// Build the confusion matrix at one tIoU threshold (0.5 is conventional).
///
/// Ground-truth spans stay available to every detection — this is a
/// diagnostic, not a matching score, so two detections landing on the same
/// span both record its class.
pub fn confusion_matrix(
    dets: &[Detection],
    gts: &[GroundTruth],
    num_classes: usize,
    tiou: f64,
) -> Result<ConfusionMatrix> {
    if num_classes == 0 {
        return Err(Error::InvalidEvaluation("no classes to evaluate".into()));
    }
    for d in dets {
        d.validate()?;
        if d.class_id >= num_classes {
            return Err(Error::ClassOutOfRange {
                class: d.class_id,
                classes: num_classes,
            });
        }
    }
    for (_, g) in gts {
        if g.class_id >= num_classes {
            return Err(Error::ClassOutOfRange {
                class: g.class_id,
                classes: num_classes,
            });
        }
    }

    let mut counts = vec![vec![0u64; num_classes + 1]; num_classes + 1];
    let mut gt_hit = vec![false; gts.len()];
    for d in dets {
        let mut best: Option<(f64, usize)> = None;
        for (g, (seq, span)) in gts.iter().enumerate() {
            if seq != &d.seq_id {
                continue;
            }
            let ov = d.tiou(span.t_start, span.t_end);
            if ov >= tiou && best.is_none_or(|(b, _)| ov > b) {
                best = Some((ov, g));
            }
        }
        match best {
            Some((_, g)) => {
                gt_hit[g] = true;
                counts[gts[g].1.class_id][d.class_id] += 1;
            }
            None => counts[num_classes][d.class_id] += 1,
        }
    }
    for (g, hit) in gt_hit.iter().enumerate() {
        if !hit {
            counts[gts[g].1.class_id][num_classes] += 1;
        }
    }
    Ok(ConfusionMatrix {
        num_classes,
        counts,
    })
}
