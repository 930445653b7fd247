//! Inter-annotator agreement expressed as mAP.
//!
//! The metric treats one annotator as ground truth and everyone else's spans
//! as detections, answering "how well would a human score on this
//! benchmark?" — an upper-bound sanity check for model numbers.

use crate::data::LabeledSpan;
use crate::error::{Error, Result};

use super::ap::{map_sweep, GroundTruth, Interpolation};
use super::detect::Detection;

/// All annotators' span sets for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceAnnotations {
    pub seq_id: String,
    /// One span list per annotator; every sequence needs at least two.
    pub annotators: Vec<Vec<LabeledSpan>>,
}

/// Which annotator plays ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroundTruthChoice {
    /// Annotator 0 is the reference (the conventional reading).
    #[default]
    First,
    /// Average the metric over every possible reference designation; this
    /// requires the same annotator count on every sequence.
    AverageOverAll,
}

fn agreement_for_reference(
    seqs: &[SequenceAnnotations],
    reference: usize,
    tiou: f64,
) -> Result<f64> {
    let mut gts: Vec<GroundTruth> = Vec::new();
    let mut flat: Vec<(usize, &str, &LabeledSpan)> = Vec::new();
    let mut num_classes = 0usize;
    for seq in seqs {
        for (a, spans) in seq.annotators.iter().enumerate() {
            for span in spans {
                num_classes = num_classes.max(span.class_id + 1);
                if a == reference {
                    gts.push((seq.seq_id.clone(), *span));
                } else {
                    flat.push((a, &seq.seq_id, span));
                }
            }
        }
    }
    if num_classes == 0 {
        return Err(Error::InvalidEvaluation(
            "no spans in any annotation set".into(),
        ));
    }
    // Every non-reference span becomes a unit-score detection. AP only sees
    // rank order, so the prescribed order — annotator index, then start
    // time — is encoded as a strictly decreasing score ramp.
    flat.sort_by(|(a1, s1, sp1), (a2, s2, sp2)| {
        a1.cmp(a2)
            .then(sp1.t_start.total_cmp(&sp2.t_start))
            .then_with(|| s1.cmp(s2))
    });
    let dets: Vec<Detection> = flat
        .iter()
        .enumerate()
        .map(|(i, (_, seq, span))| Detection {
            seq_id: (*seq).to_string(),
            class_id: span.class_id,
            t_start: span.t_start,
            t_end: span.t_end,
            score: 1.0 - i as f64 * 1e-9,
        })
        .collect();
    let report = map_sweep(&dets, &gts, num_classes, &[tiou], Interpolation::RightMax)?;
    Ok(report.map_per_threshold[0])
}

/// mAP of annotators against each other at one tIoU threshold.
pub fn human_agreement_map(
    seqs: &[SequenceAnnotations],
    tiou: f64,
    choice: GroundTruthChoice,
) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::InvalidEvaluation("no sequences".into()));
    }
    for seq in seqs {
        if seq.annotators.len() < 2 {
            return Err(Error::InvalidEvaluation(format!(
                "sequence `{}` has {} annotation set(s); agreement needs at least 2",
                seq.seq_id,
                seq.annotators.len()
            )));
        }
    }
    match choice {
        GroundTruthChoice::First => agreement_for_reference(seqs, 0, tiou),
        GroundTruthChoice::AverageOverAll => {
            let n = seqs[0].annotators.len();
            if seqs.iter().any(|s| s.annotators.len() != n) {
                return Err(Error::InvalidEvaluation(
                    "averaging over reference designations needs the same \
                     annotator count on every sequence"
                        .into(),
                ));
            }
            let mut total = 0.0;
            for r in 0..n {
                total += agreement_for_reference(seqs, r, tiou)?;
            }
            Ok(total / n as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(class: usize, start: f64, end: f64) -> LabeledSpan {
        LabeledSpan {
            class_id: class,
            t_start: start,
            t_end: end,
        }
    }

    #[test]
    fn identical_annotators_agree_perfectly() {
        let spans = vec![span(0, 0.0, 2.0), span(1, 3.0, 5.0)];
        let seqs = vec![SequenceAnnotations {
            seq_id: "s".into(),
            annotators: vec![spans.clone(), spans.clone(), spans],
        }];
        let m = human_agreement_map(&seqs, 0.5, GroundTruthChoice::First).unwrap();
        assert!((m - 1.0).abs() < 1e-12);
        let avg = human_agreement_map(&seqs, 0.5, GroundTruthChoice::AverageOverAll).unwrap();
        assert!((avg - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_annotators_agree_not_at_all() {
        let seqs = vec![SequenceAnnotations {
            seq_id: "s".into(),
            annotators: vec![vec![span(0, 0.0, 1.0)], vec![span(0, 10.0, 11.0)]],
        }];
        assert_eq!(
            human_agreement_map(&seqs, 0.5, GroundTruthChoice::First).unwrap(),
            0.0
        );
    }

    #[test]
    fn agreement_sits_exactly_at_the_overlap_ratio() {
        // [0,29] vs [11,40]: intersection 18, union 40 → tIoU exactly 0.45
        let seqs = vec![SequenceAnnotations {
            seq_id: "s".into(),
            annotators: vec![vec![span(0, 0.0, 29.0)], vec![span(0, 11.0, 40.0)]],
        }];
        assert_eq!(
            human_agreement_map(&seqs, 0.5, GroundTruthChoice::First).unwrap(),
            0.0
        );
        assert_eq!(
            human_agreement_map(&seqs, 0.4, GroundTruthChoice::First).unwrap(),
            1.0
        );
    }

    #[test]
    fn single_annotator_anywhere_is_an_error() {
        let seqs = vec![
            SequenceAnnotations {
                seq_id: "a".into(),
                annotators: vec![vec![span(0, 0.0, 1.0)], vec![span(0, 0.0, 1.0)]],
            },
            SequenceAnnotations {
                seq_id: "b".into(),
                annotators: vec![vec![span(0, 0.0, 1.0)]],
            },
        ];
        assert!(human_agreement_map(&seqs, 0.5, GroundTruthChoice::First).is_err());
    }

    #[test]
    fn averaging_requires_uniform_annotator_counts() {
        let seqs = vec![
            SequenceAnnotations {
                seq_id: "a".into(),
                annotators: vec![vec![span(0, 0.0, 1.0)]; 3],
            },
            SequenceAnnotations {
                seq_id: "b".into(),
                annotators: vec![vec![span(0, 0.0, 1.0)]; 2],
            },
        ];
        assert!(
            human_agreement_map(&seqs, 0.5, GroundTruthChoice::AverageOverAll).is_err()
        );
        assert!(human_agreement_map(&seqs, 0.5, GroundTruthChoice::First).is_ok());
    }
}
