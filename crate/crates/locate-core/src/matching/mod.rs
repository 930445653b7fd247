//! Set-prediction objective: pad the ground truth with no-action sentinels,
//! price every (ground-truth, prediction) pair, find the exact minimum-cost
//! assignment, and score the matched set with class-balanced focal and span
//! regression terms.

mod focal;
mod hungarian;
mod loss;
mod span;

pub use focal::{cb_focal_loss, ClassStats};
pub use hungarian::{hungarian, Assignment, CostMatrix};
pub use loss::{
    hungarian_loss, hungarian_loss_on_tape, match_cost, LossBreakdown, MatchWeights,
    PaddedEntry, PaddedGroundTruth, PairDetail,
};
pub use span::{span_giou, span_iou, span_loss, SpanLossTerms};
