//! Average precision and the mAP threshold sweep.

use serde::{Deserialize, Serialize};

use crate::data::LabeledSpan;
use crate::error::{Error, Result};

use super::detect::{rank_order, Detection};

/// Precision interpolation mode for the PR curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    /// Precision at recall r is the maximum precision at any recall ≥ r —
    /// the convention shared by the detection benchmarks this metric
    /// follows.
    #[default]
    RightMax,
    /// Raw precision at each true-positive rank, no interpolation.
    Raw,
}

/// The standard nine-threshold sweep: 0.1, 0.2, …, 0.9.
pub fn default_thresholds() -> Vec<f64> {
    (1..=9).map(|i| f64::from(i) / 10.0).collect()
}

/// Ground truth for evaluation: which sequence a labeled span lives in.
pub type GroundTruth = (String, LabeledSpan);

/// Average precision for one class at one tIoU threshold.
///
/// Detections are ranked best-first ([`rank_order`]); each is a true
/// positive if it overlaps a still-unmatched ground-truth span in its own
/// sequence at tIoU ≥ `tiou` (taking the highest-overlap candidate, first
/// one on ties), otherwise a false positive. AP is the sum over true
/// positives of (interpolated) precision at that rank, divided by the
/// ground-truth count. No ground truth at all scores 0.
pub fn average_precision(
    dets: &[Detection],
    gts: &[GroundTruth],
    tiou: f64,
    interp: Interpolation,
) -> Result<f64> {
    if gts.is_empty() {
        return Ok(0.0);
    }
    for d in dets {
        d.validate()?;
    }
    let mut ranked: Vec<&Detection> = dets.iter().collect();
    ranked.sort_by(|a, b| rank_order(a, b));

    let mut taken = vec![false; gts.len()];
    let mut is_tp = Vec::with_capacity(ranked.len());
    for d in &ranked {
        let mut best: Option<(f64, usize)> = None;
        for (g, (seq, span)) in gts.iter().enumerate() {
            if taken[g] || seq != &d.seq_id {
                continue;
            }
            let ov = d.tiou(span.t_start, span.t_end);
            if ov >= tiou && best.is_none_or(|(b, _)| ov > b) {
                best = Some((ov, g));
            }
        }
        match best {
            Some((_, g)) => {
                taken[g] = true;
                is_tp.push(true);
            }
            None => is_tp.push(false),
        }
    }

    // precision at every rank, then fold from the back for the right-max
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(is_tp.len());
    for (i, &hit) in is_tp.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    if interp == Interpolation::RightMax {
        for i in (0..precision.len().saturating_sub(1)).rev() {
            precision[i] = precision[i].max(precision[i + 1]);
        }
    }
    let total: f64 = is_tp
        .iter()
        .zip(&precision)
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| p)
        .sum();
    Ok(total / gts.len() as f64)
}

/// Per-class AP across a threshold sweep plus the derived means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// `[class][threshold]`
    pub ap: Vec<Vec<f64>>,
    /// Mean over classes with at least one ground-truth instance.
    pub map_per_threshold: Vec<f64>,
    /// Mean of `map_per_threshold`.
    pub avg_map: f64,
    /// Ground-truth instances per class.
    pub counts: Vec<u64>,
}

impl EvalReport {
    /// Render as a CSV table: one row per class, one column per threshold,
    /// with the per-threshold mAP and the class GT counts appended.
    pub fn to_csv(&self, class_names: Option<&[String]>) -> Result<String> {
        if let Some(names) = class_names {
            if names.len() != self.ap.len() {
                return Err(Error::InvalidEvaluation(format!(
                    "{} class names for {} classes",
                    names.len(),
                    self.ap.len()
                )));
            }
        }
        let mut out = String::from("class,count");
        for t in &self.thresholds {
            out.push_str(&format!(",ap@{t}"));
        }
        out.push('\n');
        for (c, row) in self.ap.iter().enumerate() {
            let name = class_names.map_or_else(|| format!("class_{c}"), |n| n[c].clone());
            out.push_str(&format!("{name},{}", self.counts[c]));
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out.push_str("mAP,");
        for v in &self.map_per_threshold {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
        out.push_str(&format!("avg_mAP,,{:.6}\n", self.avg_map));
        Ok(out)
    }
}

/// AP for every class at every threshold.
///
/// Classes with zero ground-truth instances are excluded from the
/// per-threshold mean (their AP would be vacuously 0 and would only dilute
/// the metric); their rows still appear in the report. If no class has any
/// ground truth the means are 0.
pub fn map_sweep(
    dets: &[Detection],
    gts: &[GroundTruth],
    num_classes: usize,
    thresholds: &[f64],
    interp: Interpolation,
) -> Result<EvalReport> {
    if num_classes == 0 {
        return Err(Error::InvalidEvaluation("no classes to evaluate".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidEvaluation("empty threshold list".into()));
    }
    for d in dets {
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

    let mut counts = vec![0u64; num_classes];
    for (_, g) in gts {
        counts[g.class_id] += 1;
    }
    let mut ap = vec![vec![0.0; thresholds.len()]; num_classes];
    for c in 0..num_classes {
        let class_dets: Vec<Detection> =
            dets.iter().filter(|d| d.class_id == c).cloned().collect();
        let class_gts: Vec<GroundTruth> = gts
            .iter()
            .filter(|(_, g)| g.class_id == c)
            .cloned()
            .collect();
        for (ti, &t) in thresholds.iter().enumerate() {
            ap[c][ti] = average_precision(&class_dets, &class_gts, t, interp)?;
        }
    }

    let live: Vec<usize> = (0..num_classes).filter(|&c| counts[c] > 0).collect();
    let map_per_threshold: Vec<f64> = (0..thresholds.len())
        .map(|ti| {
            if live.is_empty() {
                0.0
            } else {
                live.iter().map(|&c| ap[c][ti]).sum::<f64>() / live.len() as f64
            }
        })
        .collect();
    let avg_map = map_per_threshold.iter().sum::<f64>() / thresholds.len() as f64;
    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        ap,
        map_per_threshold,
        avg_map,
        counts,
    })
}
