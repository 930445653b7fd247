//! Class-balanced focal classification loss.
//!
//! The classifier is trained as `C_cls + 1` independent sigmoid detectors
//! (the extra slot is the no-action class). For a target class `c` the logit
//! signs are flipped on every non-target slot, each probability is focal-
//! modulated, and the whole sum is scaled by the effective-number weight
//! `(1 - β) / (1 - β^count(c))` so that frequent classes — above all the
//! no-action padding — do not drown out rare ones.

use crate::error::{Error, Result};

/// Floor applied to probabilities before the log so saturated logits cannot
/// produce `-inf`.
const P_FLOOR: f64 = 1e-12;

/// Training-set class frequencies plus the two loss-shape knobs.
///
/// `counts` carries one entry per label *including* the no-action slot (last
/// index); how the no-action count is chosen is the trainer's business.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    counts: Vec<u64>,
    beta: f64,
    gamma: f64,
}

impl ClassStats {
    pub fn new(counts: Vec<u64>, beta: f64, gamma: f64) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::InvalidConfig {
                field: "counts",
                problem: format!(
                    "need at least one real class plus the no-action slot, got {}",
                    counts.len()
                ),
            });
        }
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidConfig {
                field: "counts",
                problem: format!("class {i} has count 0; every class needs count >= 1"),
            });
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidConfig {
                field: "beta",
                problem: format!("must lie in [0, 1), got {beta}"),
            });
        }
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::InvalidConfig {
                field: "gamma",
                problem: format!("must be finite and >= 0, got {gamma}"),
            });
        }
        Ok(ClassStats {
            counts,
            beta,
            gamma,
        })
    }

    /// Total number of labels (`C_cls + 1`).
    pub fn num_labels(&self) -> usize {
        self.counts.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Per-label instance counts, no-action slot last.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// The effective-number re-weight `(1 - β) / (1 - β^count)`. Equals 1 at
    /// `count = 1` for any β, and decreases toward `1 - β` as the count grows.
    pub fn weight(&self, class: usize) -> Result<f64> {
        let count = *self
            .counts
            .get(class)
            .ok_or(Error::ClassOutOfRange {
                class,
                classes: self.counts.len(),
            })?;
        Ok((1.0 - self.beta) / (1.0 - self.beta.powf(count as f64)))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Class-balanced focal loss for one query's logits against one target label.
///
/// `z̃_j = z_j` on the target slot and `-z_j` elsewhere, `p̂_j = σ(z̃_j)`
/// clamped to `>= 1e-12`, and the loss is
/// `-w(target) · Σ_j (1 - p̂_j)^γ · ln p̂_j`.
pub fn cb_focal_loss(logits: &[f64], target: usize, stats: &ClassStats) -> Result<f64> {
    if logits.len() != stats.num_labels() {
        return Err(Error::ShapeMismatch {
            op: "cb_focal_loss",
            lhs: vec![logits.len()],
            rhs: vec![stats.num_labels()],
        });
    }
    if target >= logits.len() {
        return Err(Error::ClassOutOfRange {
            class: target,
            classes: logits.len(),
        });
    }
    let w = stats.weight(target)?;
    let gamma = stats.gamma();
    let mut acc = 0.0;
    for (j, &z) in logits.iter().enumerate() {
        let zt = if j == target { z } else { -z };
        let p = sigmoid(zt).max(P_FLOOR);
        acc += (1.0 - p).powf(gamma) * p.ln();
    }
    Ok(-w * acc)
}
