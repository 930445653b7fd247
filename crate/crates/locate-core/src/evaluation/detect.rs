//! Detections: decoding raw network outputs and temporal NMS.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::span_iou;
use crate::model::RawPredictionSet;

/// One scored action proposal in real time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "seq")]
    pub seq_id: String,
    #[serde(rename = "class")]
    pub class_id: usize,
    #[serde(rename = "start")]
    pub t_start: f64,
    #[serde(rename = "end")]
    pub t_end: f64,
    pub score: f64,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.t_start < self.t_end) {
            return Err(Error::InvalidDetection {
                seq: self.seq_id.clone(),
                problem: format!("span [{}, {}] is not an interval", self.t_start, self.t_end),
            });
        }
        if !(self.score.is_finite() && (0.0..=1.0).contains(&self.score)) {
            return Err(Error::InvalidDetection {
                seq: self.seq_id.clone(),
                problem: format!("score {} not in [0, 1]", self.score),
            });
        }
        Ok(())
    }

    /// Temporal IoU with another interval; both must be valid spans.
    pub fn tiou(&self, start: f64, end: f64) -> f64 {
        span_iou([self.t_start, self.t_end], [start, end]).unwrap_or(0.0)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Turn one sequence's raw prediction set into scored detections.
///
/// Scoring is sigmoid-per-class, consistent with how the loss treats logits:
/// each query's class is the real class with the highest sigmoid, its score
/// that sigmoid. A query is dropped when the no-action sigmoid exceeds the
/// best real class, when its score falls below `score_threshold`, or when
/// its span has zero length (an exact tie of the two regressed edges, which
/// cannot be ranked as an interval).
pub fn decode_predictions(
    raw: &RawPredictionSet,
    seq_id: &str,
    seq_duration: f64,
    score_threshold: f64,
) -> Result<Vec<Detection>> {
    if !(seq_duration.is_finite() && seq_duration > 0.0) {
        return Err(Error::InvalidEvaluation(format!(
            "sequence duration {seq_duration} must be positive"
        )));
    }
    raw.validate()?;
    let c_cls = raw.num_classes();
    let mut out = Vec::new();
    for (q, logits) in raw.class_logits.iter().enumerate() {
        let (mut best, mut best_score) = (0usize, f64::NEG_INFINITY);
        for (j, &z) in logits[..c_cls].iter().enumerate() {
            let s = sigmoid(z);
            if s > best_score {
                best = j;
                best_score = s;
            }
        }
        let no_action = sigmoid(logits[c_cls]);
        if no_action > best_score || best_score < score_threshold {
            continue;
        }
        let [lo, hi] = raw.spans[q];
        if lo == hi {
            continue;
        }
        out.push(Detection {
            seq_id: seq_id.to_string(),
            class_id: best,
            t_start: lo * seq_duration,
            t_end: hi * seq_duration,
            score: best_score,
        });
    }
    Ok(out)
}

/// Canonical detection ordering: score descending, then start time, then
/// sequence id, then class — total and deterministic for valid detections.
pub(crate) fn rank_order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.t_start.total_cmp(&b.t_start))
        .then_with(|| a.seq_id.cmp(&b.seq_id))
        .then(a.class_id.cmp(&b.class_id))
}

/// Greedy temporal non-maximal suppression.
///
/// Detections are visited best-first (see [`rank_order`]); each one is kept
/// unless it overlaps an already-kept detection of the same class in the
/// same sequence at tIoU ≥ `iou_threshold`. Suppression is only ever tested
/// against *kept* detections, so a suppressed span cannot shadow a later
/// one. The result keeps the visit order.
pub fn temporal_nms(dets: &[Detection], iou_threshold: f64) -> Result<Vec<Detection>> {
    for d in dets {
        d.validate()?;
    }
    let mut sorted: Vec<&Detection> = dets.iter().collect();
    sorted.sort_by(|a, b| rank_order(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        let suppressed = kept.iter().any(|k| {
            k.class_id == d.class_id
                && k.seq_id == d.seq_id
                && k.tiou(d.t_start, d.t_end) >= iou_threshold
        });
        if !suppressed {
            kept.push(d.clone());
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(seq: &str, class: usize, start: f64, end: f64, score: f64) -> Detection {
        Detection {
            seq_id: seq.into(),
            class_id: class,
            t_start: start,
            t_end: end,
            score,
        }
    }

    #[test]
    fn duplicate_spans_keep_only_the_best() {
        let dets = vec![det("a", 0, 1.0, 2.0, 0.9), det("a", 0, 1.0, 2.0, 0.8)];
        let kept = temporal_nms(&dets, 0.5).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn different_classes_never_suppress_each_other() {
        let dets = vec![det("a", 0, 1.0, 2.0, 0.9), det("a", 1, 1.0, 2.0, 0.8)];
        assert_eq!(temporal_nms(&dets, 0.1).unwrap().len(), 2);
    }

    #[test]
    fn different_sequences_never_suppress_each_other() {
        let dets = vec![det("a", 0, 1.0, 2.0, 0.9), det("b", 0, 1.0, 2.0, 0.8)];
        assert_eq!(temporal_nms(&dets, 0.1).unwrap().len(), 2);
    }

    #[test]
    fn suppressed_spans_do_not_shadow_later_ones() {
        // [1,3] dies to [0,2] (tIoU 1/3), so [2.5,4] survives: its only
        // overlap is with the already-dead span.
        let dets = vec![
            det("a", 0, 0.0, 2.0, 0.9),
            det("a", 0, 1.0, 3.0, 0.8),
            det("a", 0, 2.5, 4.0, 0.7),
        ];
        let kept = temporal_nms(&dets, 0.3).unwrap();
        let spans: Vec<[f64; 2]> = kept.iter().map(|d| [d.t_start, d.t_end]).collect();
        assert_eq!(spans, vec![[0.0, 2.0], [2.5, 4.0]]);
    }

    #[test]
    fn decode_suppresses_no_action_queries() {
        let raw = RawPredictionSet {
            class_logits: vec![vec![-20.0, -20.0, -20.0, 20.0]; 4],
            spans: vec![[0.1, 0.3]; 4],
        };
        assert!(decode_predictions(&raw, "s", 10.0, 0.0).unwrap().is_empty());
    }

    #[test]
    fn decode_denormalizes_and_scores_by_sigmoid() {
        let raw = RawPredictionSet {
            class_logits: vec![vec![-5.0, -5.0, -5.0, 20.0, -20.0]],
            spans: vec![[0.2, 0.4]],
        };
        let dets = decode_predictions(&raw, "s", 10.0, 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].class_id, 3);
        assert!((dets[0].t_start - 2.0).abs() < 1e-12);
        assert!((dets[0].t_end - 4.0).abs() < 1e-12);
        assert!(dets[0].score > 0.999_999);
    }

    #[test]
    fn decode_keeps_every_query_when_nothing_suppresses() {
        // hugely negative no-action logit, zero threshold: all queries emitted
        let raw = RawPredictionSet {
            class_logits: vec![vec![0.1, 0.2, -40.0]; 5],
            spans: vec![[0.1, 0.2], [0.2, 0.3], [0.3, 0.4], [0.4, 0.5], [0.5, 0.6]],
        };
        assert_eq!(decode_predictions(&raw, "s", 2.0, 0.0).unwrap().len(), 5);
    }
}
