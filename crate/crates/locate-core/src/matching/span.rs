//! Interval geometry for temporal spans: IoU, generalized IoU, and the span
//! regression terms.
//!
//! Everything here works on plain `[start, end]` pairs in arbitrary units —
//! normalized spans during training, seconds during evaluation. The ratios are
//! unit-free either way.

use crate::error::{Error, Result};

/// The two regression terms for one (prediction, ground-truth) pair plus
/// their weighted combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanLossTerms {
    /// `1 - gIoU`, in `[0, 2]`.
    pub l_iou: f64,
    /// `|Δstart| + |Δend|`.
    pub l_l1: f64,
    /// `λ_iou · l_iou + λ_l1 · l_l1`.
    pub l_span: f64,
}

fn check(span: [f64; 2]) -> Result<()> {
    if !span[0].is_finite() || !span[1].is_finite() || span[0] >= span[1] {
        return Err(Error::DegenerateSpan {
            start: span[0],
            end: span[1],
        });
    }
    Ok(())
}

/// Intersection-over-union of two intervals. Symmetric, in `[0, 1]`.
pub fn span_iou(a: [f64; 2], b: [f64; 2]) -> Result<f64> {
    check(a)?;
    check(b)?;
    let inter = (a[1].min(b[1]) - a[0].max(b[0])).max(0.0);
    let union = (a[1] - a[0]) + (b[1] - b[0]) - inter;
    Ok(inter / union)
}

/// Generalized IoU in one dimension: IoU minus the fraction of the covering
/// hull that neither interval reaches. In `(-1, 1]`; equals IoU when the
/// intervals touch or overlap, and goes negative as they separate — which is
/// what gives the regression loss a gradient on disjoint pairs.
pub fn span_giou(a: [f64; 2], b: [f64; 2]) -> Result<f64> {
    check(a)?;
    check(b)?;
    let inter = (a[1].min(b[1]) - a[0].max(b[0])).max(0.0);
    let union = (a[1] - a[0]) + (b[1] - b[0]) - inter;
    let hull = a[1].max(b[1]) - a[0].min(b[0]);
    Ok(inter / union - (hull - union) / hull)
}

/// Regression terms for a matched pair: L1 distance on the endpoints plus the
/// gIoU term, combined with the given weights.
pub fn span_loss(
    pred: [f64; 2],
    gt: [f64; 2],
    lambda_iou: f64,
    lambda_l1: f64,
) -> Result<SpanLossTerms> {
    let l_iou = 1.0 - span_giou(pred, gt)?;
    let l_l1 = (pred[0] - gt[0]).abs() + (pred[1] - gt[1]).abs();
    Ok(SpanLossTerms {
        l_iou,
        l_l1,
        l_span: lambda_iou * l_iou + lambda_l1 * l_l1,
    })
}
