//! The localization network.
//!
//! A transformer encoder–decoder over snippet features: the encoder refines
//! the `[C, T]` sequence with deformable self-attention, the decoder turns
//! `N_a` learned queries into candidate detections, and two small heads read
//! class logits and a normalized span off each query. Configuration,
//! parameter storage, and the forward pass live in their own submodules and
//! re-export flat from here.

mod config;
mod network;
mod params;

pub use config::ModelConfig;
pub use network::{
    decoder_forward, deformable_attention, detach, embed_input, encoder_forward, forward,
    predict, predict_heads, ForwardVars,
};
pub use params::{
    BoundParams, DecLayer, DeformAttn, EncLayer, Linear, ModelParams, Norm, Params,
};

use crate::error::{Error, Result};

/// A fixed-size set of candidate detections for one sequence, read off the
/// network outputs: per query a row of class logits (index `C_cls` is the
/// no-action class) plus a `[start, end]` span normalized by the sequence
/// duration.
///
/// Spans are stored *canonicalized*: `start <= end`, the min/max of the two
/// squashed head outputs. Equality of the two only happens when the raw pair
/// ties exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPredictionSet {
    /// `[N_a][C_cls + 1]` logits.
    pub class_logits: Vec<Vec<f64>>,
    /// `[N_a]` spans, each `[start, end]` in `[0, 1]`.
    pub spans: Vec<[f64; 2]>,
}

impl RawPredictionSet {
    pub fn num_queries(&self) -> usize {
        self.spans.len()
    }

    /// Number of real classes (excludes the no-action slot).
    pub fn num_classes(&self) -> usize {
        self.class_logits.first().map_or(0, |row| row.len() - 1)
    }

    /// Structural checks: matching lengths, rectangular logits with at least
    /// one real class, everything finite, spans inside `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        if self.class_logits.len() != self.spans.len() {
            return Err(Error::ShapeMismatch {
                op: "RawPredictionSet",
                lhs: vec![self.class_logits.len()],
                rhs: vec![self.spans.len()],
            });
        }
        let width = self.class_logits.first().map_or(0, Vec::len);
        if !self.class_logits.is_empty() && width < 2 {
            return Err(Error::InvalidConfig {
                field: "class_logits",
                problem: format!("need at least 2 columns (one class + no-action), got {width}"),
            });
        }
        for (q, row) in self.class_logits.iter().enumerate() {
            if row.len() != width {
                return Err(Error::ShapeMismatch {
                    op: "RawPredictionSet",
                    lhs: vec![q, row.len()],
                    rhs: vec![q, width],
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    op: format!("prediction logits for query {q}"),
                });
            }
        }
        for (q, s) in self.spans.iter().enumerate() {
            let ok = s.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v));
            if !ok {
                return Err(Error::InvalidConfig {
                    field: "spans",
                    problem: format!("query {q} span [{}, {}] outside [0, 1]", s[0], s[1]),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds() -> RawPredictionSet {
        RawPredictionSet {
            class_logits: vec![vec![0.1, -0.2, 0.3], vec![0.0, 0.4, -0.1]],
            spans: vec![[0.1, 0.4], [0.5, 0.9]],
        }
    }

    #[test]
    fn valid_set_passes() {
        let p = preds();
        assert!(p.validate().is_ok());
        assert_eq!(p.num_queries(), 2);
        assert_eq!(p.num_classes(), 2);
    }

    #[test]
    fn ragged_logits_rejected() {
        let mut p = preds();
        p.class_logits[1].pop();
        assert!(p.validate().is_err());
    }

    #[test]
    fn out_of_range_span_rejected() {
        let mut p = preds();
        p.spans[0] = [0.1, 1.2];
        assert!(p.validate().is_err());
    }

    #[test]
    fn non_finite_logit_rejected() {
        let mut p = preds();
        p.class_logits[0][1] = f64::NAN;
        assert!(matches!(p.validate(), Err(Error::NonFinite { .. })));
    }
}
