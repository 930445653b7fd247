//! Ground-truth padding, pairwise match costs, and the Hungarian training
//! loss — as plain values for matching/reporting and as a tape program for
//! backprop.
//!
//! The assignment itself is never differentiated through: the value-level
//! pass picks σ*, and the tape-level builder treats it as a constant.

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::LabeledSpan;
use crate::error::{Error, Result};
use crate::model::RawPredictionSet;

use super::focal::{cb_focal_loss, ClassStats};
use super::hungarian::{lex_min_assignment, Assignment};
use super::span::span_loss;

/// Weights on the two span-regression terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchWeights {
    pub lambda_iou: f64,
    pub lambda_l1: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        MatchWeights {
            lambda_iou: 2.0,
            lambda_l1: 5.0,
        }
    }
}

/// One row of the padded ground-truth set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PaddedEntry {
    /// An annotated span, times normalized to `[0, 1]`.
    Real { class: usize, span: [f64; 2] },
    /// The sentinel a query should map to when nothing is there.
    NoAction,
}

/// Ground truth padded to exactly the query count: real entries first, then
/// no-action sentinels.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedGroundTruth {
    entries: Vec<PaddedEntry>,
    num_real: usize,
}

impl PaddedGroundTruth {
    /// Normalize `gts` by the sequence duration and pad with sentinels up to
    /// `num_queries` entries.
    pub fn from_spans(
        gts: &[LabeledSpan],
        seq_duration: f64,
        num_queries: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if !(seq_duration.is_finite() && seq_duration > 0.0) {
            return Err(Error::InvalidConfig {
                field: "seq_duration",
                problem: format!("must be positive and finite, got {seq_duration}"),
            });
        }
        if gts.len() > num_queries {
            return Err(Error::TooManySpans {
                gt: gts.len(),
                queries: num_queries,
            });
        }
        let mut entries = Vec::with_capacity(num_queries);
        for gt in gts {
            if gt.class_id >= num_classes {
                return Err(Error::ClassOutOfRange {
                    class: gt.class_id,
                    classes: num_classes,
                });
            }
            let span = [gt.t_start / seq_duration, gt.t_end / seq_duration];
            let valid = span[0].is_finite()
                && span[1].is_finite()
                && 0.0 <= span[0]
                && span[0] < span[1]
                && span[1] <= 1.0;
            if !valid {
                return Err(Error::DegenerateSpan {
                    start: span[0],
                    end: span[1],
                });
            }
            entries.push(PaddedEntry::Real {
                class: gt.class_id,
                span,
            });
        }
        let num_real = entries.len();
        entries.resize(num_queries, PaddedEntry::NoAction);
        Ok(PaddedGroundTruth { entries, num_real })
    }

    pub fn entries(&self) -> &[PaddedEntry] {
        &self.entries
    }

    pub fn num_real(&self) -> usize {
        self.num_real
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Cost of pairing one prediction (its logits and canonical span) with one
/// padded ground-truth row: classification + span terms for a real row, a
/// constant 0 for a sentinel row so that matching is driven by real spans
/// alone.
pub fn match_cost(
    logits: &[f64],
    span: [f64; 2],
    entry: &PaddedEntry,
    stats: &ClassStats,
    weights: MatchWeights,
) -> Result<f64> {
    match entry {
        PaddedEntry::NoAction => Ok(0.0),
        PaddedEntry::Real { class, span: gt } => {
            let cls = cb_focal_loss(logits, *class, stats)?;
            let sp = span_loss(span, *gt, weights.lambda_iou, weights.lambda_l1)?;
            Ok(cls + sp.l_span)
        }
    }
}

/// Per-pair contribution, recorded for inspection and reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDetail {
    /// Prediction (query) index.
    pub query: usize,
    /// The ground-truth row this query was matched to.
    pub target: PaddedEntry,
    pub l_cb: f64,
    /// Zero for sentinel pairs.
    pub l_iou: f64,
    /// Zero for sentinel pairs.
    pub l_l1: f64,
}

/// Aggregated loss terms for one sequence under the optimal assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_cb: f64,
    pub l_l1: f64,
    pub l_iou: f64,
    /// `λ_iou · l_iou + λ_l1 · l_l1`.
    pub l_span: f64,
    /// `l_cb + l_span`: the scalar actually trained on.
    pub l_total: f64,
    /// One entry per padded row, in row order.
    pub pairs: Vec<PairDetail>,
}

/// Optimal assignment for one prediction set against padded ground truth.
///
/// Sentinel rows cost 0 against every column, so only the real rows need a
/// solver: the real block is matched lexicographically-optimally, and the
/// leftover columns go to the sentinel rows in ascending order — exactly the
/// permutation a full N_a×N_a solve with the same tie-break would produce.
fn assign(
    preds: &RawPredictionSet,
    padded: &PaddedGroundTruth,
    stats: &ClassStats,
    weights: MatchWeights,
) -> Result<Assignment> {
    let n_a = preds.num_queries();
    let r = padded.num_real();
    let mut reduced = vec![0.0f64; r * n_a];
    for (i, entry) in padded.entries()[..r].iter().enumerate() {
        for q in 0..n_a {
            reduced[i * n_a + q] =
                match_cost(&preds.class_logits[q], preds.spans[q], entry, stats, weights)?;
        }
    }
    let mut perm = lex_min_assignment(r, n_a, &|i, q| reduced[i * n_a + q]);
    let mut taken = vec![false; n_a];
    for &c in &perm {
        taken[c] = true;
    }
    for (q, t) in taken.iter().enumerate() {
        if !t {
            perm.push(q);
        }
    }
    Ok(Assignment::new(perm))
}

/// The set-prediction training loss for one sequence.
///
/// Ground truth is normalized by `seq_duration`, padded to the query count,
/// matched against the predictions by exact minimum-cost assignment, and
/// scored: matched real pairs contribute classification + span terms,
/// sentinel pairs contribute classification toward the no-action class only.
pub fn hungarian_loss(
    preds: &RawPredictionSet,
    gts: &[LabeledSpan],
    seq_duration: f64,
    stats: &ClassStats,
    weights: MatchWeights,
) -> Result<(LossBreakdown, Assignment)> {
    preds.validate()?;
    let n_a = preds.num_queries();
    let c_cls = preds.num_classes();
    if n_a == 0 {
        return Err(Error::InvalidConfig {
            field: "preds",
            problem: "prediction set has no queries".into(),
        });
    }
    if stats.num_labels() != c_cls + 1 {
        return Err(Error::ShapeMismatch {
            op: "hungarian_loss",
            lhs: vec![stats.num_labels()],
            rhs: vec![c_cls + 1],
        });
    }
    let padded = PaddedGroundTruth::from_spans(gts, seq_duration, n_a, c_cls)?;
    let assignment = assign(preds, &padded, stats, weights)?;

    let mut l_cb = 0.0;
    let mut l_l1 = 0.0;
    let mut l_iou = 0.0;
    let mut pairs = Vec::with_capacity(n_a);
    for (row, entry) in padded.entries().iter().enumerate() {
        let q = assignment.column_of(row);
        match entry {
            PaddedEntry::Real { class, span: gt } => {
                let cb = cb_focal_loss(&preds.class_logits[q], *class, stats)?;
                let sp = span_loss(preds.spans[q], *gt, weights.lambda_iou, weights.lambda_l1)?;
                l_cb += cb;
                l_iou += sp.l_iou;
                l_l1 += sp.l_l1;
                pairs.push(PairDetail {
                    query: q,
                    target: *entry,
                    l_cb: cb,
                    l_iou: sp.l_iou,
                    l_l1: sp.l_l1,
                });
            }
            PaddedEntry::NoAction => {
                let cb = cb_focal_loss(&preds.class_logits[q], c_cls, stats)?;
                l_cb += cb;
                pairs.push(PairDetail {
                    query: q,
                    target: *entry,
                    l_cb: cb,
                    l_iou: 0.0,
                    l_l1: 0.0,
                });
            }
        }
    }
    let l_span = weights.lambda_iou * l_iou + weights.lambda_l1 * l_l1;
    let breakdown = LossBreakdown {
        l_cb,
        l_l1,
        l_iou,
        l_span,
        l_total: l_cb + l_span,
        pairs,
    };
    Ok((breakdown, assignment))
}

/// Build the same loss as a tape program over the network's output variables,
/// for a *fixed* assignment (computed by [`hungarian_loss`] on detached
/// values). Returns a scalar variable suitable for `backward`.
///
/// * `logits` — `[C_cls + 1, N_a]`
/// * `span_lo` / `span_hi` — `[1, N_a]`, the canonicalized span endpoints
pub fn hungarian_loss_on_tape(
    tape: &mut Tape,
    logits: Var,
    span_lo: Var,
    span_hi: Var,
    padded: &PaddedGroundTruth,
    assignment: &Assignment,
    stats: &ClassStats,
    weights: MatchWeights,
) -> Result<Var> {
    let labels = stats.num_labels();
    let n_a = padded.len();
    let [lr, lc] = tape.value(logits).dims2("hungarian_loss_on_tape")?;
    if lr != labels || lc != n_a || assignment.len() != n_a {
        return Err(Error::ShapeMismatch {
            op: "hungarian_loss_on_tape",
            lhs: vec![lr, lc],
            rhs: vec![labels, n_a],
        });
    }
    for v in [span_lo, span_hi] {
        let [r, c] = tape.value(v).dims2("hungarian_loss_on_tape")?;
        if r != 1 || c != n_a {
            return Err(Error::ShapeMismatch {
                op: "hungarian_loss_on_tape",
                lhs: vec![r, c],
                rhs: vec![1, n_a],
            });
        }
    }

    // Per-query rows: [N_a, C_cls+1] and [N_a, 1].
    let logits_t = tape.transpose(logits)?;
    let lo_t = tape.transpose(span_lo)?;
    let hi_t = tape.transpose(span_hi)?;

    let ones_row = tape.constant(Tensor::full(&[1, labels], 1.0))?;
    let p_floor = tape.constant(Tensor::full(&[1, labels], 1e-12))?;
    let zero11 = tape.constant(Tensor::zeros(&[1, 1]))?;
    let one11 = tape.constant(Tensor::full(&[1, 1], 1.0))?;
    let gamma = stats.gamma();

    let mut total: Option<Var> = None;
    let push = |tape: &mut Tape, total: &mut Option<Var>, term: Var| -> Result<()> {
        *total = Some(match *total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
        Ok(())
    };

    for (row, entry) in padded.entries().iter().enumerate() {
        let q = assignment.column_of(row);
        let target = match entry {
            PaddedEntry::Real { class, .. } => *class,
            PaddedEntry::NoAction => labels - 1,
        };

        // Classification: flip every non-target logit's sign, then the
        // focal-modulated log-likelihood sum scaled by -w(target).
        let zq = tape.slice_rows(logits_t, q, 1)?;
        let mask = tape.constant(Tensor::from_fn(&[1, labels], |j| {
            if j == target {
                1.0
            } else {
                -1.0
            }
        }))?;
        let zt = tape.mul(zq, mask)?;
        let p_raw = tape.sigmoid(zt)?;
        let p = tape.maximum(p_raw, p_floor)?;
        let logp = tape.ln(p)?;
        let weighted = if gamma == 0.0 {
            // (1-p)^0 ≡ 1, and the powf backward rule would 0/0 at p = 1.
            logp
        } else {
            let one_minus = tape.sub(ones_row, p)?;
            let modulator = if gamma == 1.0 {
                one_minus
            } else {
                tape.powf(one_minus, gamma)?
            };
            tape.mul(modulator, logp)?
        };
        let summed = tape.sum(weighted, None)?;
        let cb = tape.scale(summed, -stats.weight(target)?)?;
        push(tape, &mut total, cb)?;

        if let PaddedEntry::Real { span: gt, .. } = entry {
            let s = tape.slice_rows(lo_t, q, 1)?;
            let e = tape.slice_rows(hi_t, q, 1)?;
            let gs = tape.constant(Tensor::full(&[1, 1], gt[0]))?;
            let ge = tape.constant(Tensor::full(&[1, 1], gt[1]))?;

            let ds = tape.sub(s, gs)?;
            let ds = tape.abs(ds)?;
            let de = tape.sub(e, ge)?;
            let de = tape.abs(de)?;
            let l1 = tape.add(ds, de)?;

            let lo_max = tape.maximum(s, gs)?;
            let hi_min = tape.minimum(e, ge)?;
            let overlap = tape.sub(hi_min, lo_max)?;
            let inter = tape.maximum(overlap, zero11)?;
            let pred_len = tape.sub(e, s)?;
            let both = tape.add_scalar(pred_len, gt[1] - gt[0])?;
            let union = tape.sub(both, inter)?;
            let hi_max = tape.maximum(e, ge)?;
            let lo_min = tape.minimum(s, gs)?;
            let hull = tape.sub(hi_max, lo_min)?;
            let iou = tape.div(inter, union)?;
            let slack = tape.sub(hull, union)?;
            let penalty = tape.div(slack, hull)?;
            let giou = tape.sub(iou, penalty)?;
            let l_iou = tape.sub(one11, giou)?;

            let a = tape.scale(l_iou, weights.lambda_iou)?;
            let b = tape.scale(l1, weights.lambda_l1)?;
            let pair = tape.add(a, b)?;
            let pair = tape.reshape(pair, &[1])?;
            push(tape, &mut total, pair)?;
        }
    }
    total.ok_or(Error::InvalidConfig {
        field: "padded",
        problem: "padded ground truth has no entries".into(),
    })
}
