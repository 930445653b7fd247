//! Synthetic labeled motion generator.
//!
//! Stands in for a real mocap corpus at desk scale. Every sequence is a
//! neutral standing pose; during a labeled span, the joints assigned to that
//! span's class swing along class-specific sinusoids. Classes are told apart
//! by which joints move and at what frequency, so a detector genuinely has to
//! read the skeleton, not just the energy.
//!
//! Properties the rest of the pipeline leans on:
//!
//! * pure function of the config — the RNG is seeded ChaCha8 and every draw
//!   happens in a fixed, documented order (sequence length, span count, then
//!   per span: length, overlap coin, placement, class; finally per-coordinate
//!   noise), so equal configs give bit-identical datasets;
//! * motif displacement depends only on the class and the time elapsed since
//!   span start, so with zero noise two spans of the same class contain
//!   identical frames regardless of where or in which sequence they occur;
//! * span boundaries sit exactly on the frame grid;
//! * at any instant at most two spans are active, and overlapping spans
//!   always carry different classes;
//! * the pelvis, hips, and shoulders never carry a motif, keeping the
//!   canonical-frame construction well conditioned.

use super::{Dataset, Frame, LabeledSpan, MotionSequence, NUM_JOINTS};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Joints that stay motif-free so normalization stays well conditioned.
const ANCHOR_JOINTS: [usize; 5] = [0, 1, 2, 16, 17];

/// Motif-capable joints: everything but the anchors, in index order.
fn motif_pool() -> Vec<usize> {
    (0..NUM_JOINTS)
        .filter(|j| !ANCHOR_JOINTS.contains(j))
        .collect()
}

/// Motif amplitude in meters.
const MOTIF_AMP: f64 = 0.15;
/// Span length bounds in seconds.
const SPAN_MIN_S: f64 = 0.8;
const SPAN_MAX_S: f64 = 2.4;
/// Probability that a span starts before the previous one ends.
const OVERLAP_P: f64 = 0.35;
/// Maximum idle gap between consecutive spans, seconds.
const GAP_MAX_S: f64 = 1.0;
/// Golden-angle phase increment decorrelating the per-axis sinusoids.
const PHASE_STEP: f64 = 2.399963229728653;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_sequences: usize,
    pub num_classes: usize,
    /// Sequence duration bounds in seconds.
    pub duration_range: (f64, f64),
    /// How many labeled spans each sequence gets (inclusive bounds).
    pub spans_per_sequence_range: (usize, usize),
    pub fps: f64,
    /// Std of the Gaussian jitter added to every coordinate, meters.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_sequences: 20,
            num_classes: 5,
            duration_range: (8.0, 16.0),
            spans_per_sequence_range: (1, 4),
            fps: 10.0,
            noise_std: 0.01,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, problem: String| {
            Err(Error::InvalidConfig { field, problem })
        };
        if self.num_sequences == 0 {
            return bad("num_sequences", "must be at least 1".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes", "must be at least 1".into());
        }
        let available = motif_pool().len();
        if self.num_classes > available {
            return Err(Error::TooManyClasses {
                classes: self.num_classes,
                available,
            });
        }
        let (dmin, dmax) = self.duration_range;
        if !(dmin.is_finite() && dmax.is_finite()) || dmin <= 0.0 || dmin > dmax {
            return bad(
                "duration_range",
                format!("needs 0 < min <= max, got ({dmin}, {dmax})"),
            );
        }
        let (smin, smax) = self.spans_per_sequence_range;
        if smin < 1 || smin > smax {
            return bad(
                "spans_per_sequence_range",
                format!("needs 1 <= min <= max, got ({smin}, {smax})"),
            );
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad("fps", format!("must be positive, got {}", self.fps));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(
                "noise_std",
                format!("must be non-negative, got {}", self.noise_std),
            );
        }
        // The shortest allowed sequence must fit at least one span.
        let f_min = (dmin * self.fps).floor() as usize;
        let span_min = span_frame_bounds(self.fps).0;
        if span_min > f_min {
            return Err(Error::SpanPlacement {
                requested: smin,
                span_frames: span_min,
                total_frames: f_min,
            });
        }
        Ok(())
    }
}

/// Neutral standing pose in the canonical frame: x toward the subject's
/// left, y the shoulder-twist direction, z up, pelvis at the origin.
pub fn neutral_pose() -> Frame {
    let mut f = [[0.0; 3]; NUM_JOINTS];
    f[0] = [0.00, 0.00, 0.00]; // pelvis
    f[1] = [0.10, 0.00, -0.02]; // left hip
    f[2] = [-0.10, 0.00, -0.02]; // right hip
    f[3] = [0.00, 0.01, 0.12]; // spine1
    f[4] = [0.11, 0.01, -0.42]; // left knee
    f[5] = [-0.11, 0.01, -0.42]; // right knee
    f[6] = [0.00, 0.02, 0.24]; // spine2
    f[7] = [0.12, 0.02, -0.82]; // left ankle
    f[8] = [-0.12, 0.02, -0.82]; // right ankle
    f[9] = [0.00, 0.02, 0.36]; // spine3
    f[10] = [0.13, 0.12, -0.88]; // left foot
    f[11] = [-0.13, 0.12, -0.88]; // right foot
    f[12] = [0.00, 0.01, 0.46]; // neck
    f[13] = [0.06, 0.01, 0.44]; // left collar
    f[14] = [-0.06, 0.01, 0.44]; // right collar
    f[15] = [0.00, 0.03, 0.60]; // head
    // The slight y-offset twists the shoulder line out of the hip plane so
    // the body frame is never degenerate.
    f[16] = [0.17, 0.06, 0.52]; // left shoulder
    f[17] = [-0.17, -0.06, 0.52]; // right shoulder
    f[18] = [0.22, 0.05, 0.28]; // left elbow
    f[19] = [-0.22, -0.05, 0.28]; // right elbow
    f[20] = [0.24, 0.04, 0.05]; // left wrist
    f[21] = [-0.24, -0.04, 0.05]; // right wrist
    f
}

/// Joints animated by class `k` under `num_classes` total classes: an equal,
/// disjoint slice of the motif pool.
pub fn class_joints(k: usize, num_classes: usize) -> Vec<usize> {
    let pool = motif_pool();
    let per_class = pool.len() / num_classes;
    pool[k * per_class..(k + 1) * per_class].to_vec()
}

/// Motif oscillation frequency for class `k`, Hz. Spread so no two classes
/// share a harmonic relationship over the span lengths used.
fn class_frequency(k: usize) -> f64 {
    0.8 + 0.37 * k as f64
}

/// Displacement of (joint, axis) for class `k` at `tau` seconds after span
/// start. Zero at tau = 0 so spans start without a positional jump.
fn motif_displacement(k: usize, joint: usize, axis: usize, tau: f64) -> f64 {
    let phase = PHASE_STEP * (joint * 3 + axis + 1) as f64;
    let arg = 2.0 * std::f64::consts::PI * class_frequency(k) * tau + phase;
    MOTIF_AMP * (arg.sin() - phase.sin())
}

/// Span length bounds in frames for a given fps (at least 2 frames).
fn span_frame_bounds(fps: f64) -> (usize, usize) {
    let lo = ((SPAN_MIN_S * fps).round() as usize).max(2);
    let hi = ((SPAN_MAX_S * fps).round() as usize).max(lo);
    (lo, hi)
}

/// Lay out span frame ranges for one sequence as `(start, end, class)`
/// triples, sorted by start.
///
/// Simultaneity is controlled through two frontiers: `open` is the placed
/// span with the latest end (the only span a newcomer may overlap), `closed`
/// the latest end among all the others. Every new span starts at or after
/// `closed`'s end — by induction every span except `open` has ended by then —
/// so a newcomer overlaps `open` or nothing, which caps simultaneity at two
/// and makes the distinct-class rule a single comparison against `open`.
fn place_spans(
    rng: &mut ChaCha8Rng,
    f: usize,
    n_spans: usize,
    min_spans: usize,
    num_classes: usize,
    fps: f64,
) -> Result<Vec<(usize, usize, usize)>> {
    let (len_lo, len_hi) = span_frame_bounds(fps);
    let gap_max = (GAP_MAX_S * fps).round() as usize;
    let mut spans: Vec<(usize, usize, usize)> = Vec::with_capacity(n_spans);
    // (start, end, class) of the latest-ending span, and the latest end
    // among all other spans.
    let mut open: Option<(usize, usize, usize)> = None;
    let mut closed_end = 0usize;
    for _ in 0..n_spans {
        let len = rng.random_range(len_lo..=len_hi).min(f);
        let want_overlap = open.is_some() && num_classes > 1 && rng.random_bool(OVERLAP_P);
        let mut start = match (open, want_overlap) {
            (Some((os, oe, _)), true) => {
                let lo = closed_end.max(os);
                let hi = (oe - 1).min(f.saturating_sub(len));
                if lo <= hi {
                    rng.random_range(lo..=hi)
                } else {
                    oe + rng.random_range(0..=gap_max)
                }
            }
            (Some((_, oe, _)), false) => oe + rng.random_range(0..=gap_max),
            (None, _) => rng.random_range(0..=gap_max.min(f.saturating_sub(len))),
        };
        if start + len > f {
            // Squeeze against the end of the clip if the overlap rules allow.
            let squeezed = f.saturating_sub(len);
            let collides_open = open.map_or(false, |(_, oe, _)| squeezed < oe);
            if squeezed < closed_end || (collides_open && num_classes == 1) {
                if spans.len() >= min_spans {
                    break;
                }
                return Err(Error::SpanPlacement {
                    requested: n_spans,
                    span_frames: len,
                    total_frames: f,
                });
            }
            start = squeezed;
        }
        let end = start + len;
        let class = match open {
            // Overlapping the open span: uniform over the other classes.
            Some((_, oe, oc)) if start < oe => {
                let draw = rng.random_range(0..num_classes - 1);
                draw + usize::from(draw >= oc)
            }
            _ => rng.random_range(0..num_classes),
        };
        spans.push((start, end, class));
        match open {
            Some((_, oe, _)) if end <= oe => closed_end = end,
            other => {
                closed_end = other.map_or(closed_end, |(_, oe, _)| oe);
                open = Some((start, end, class));
            }
        }
    }
    spans.sort_by_key(|&(s, e, _)| (s, e));
    Ok(spans)
}

/// Generate a labeled synthetic dataset. Deterministic in `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = if cfg.noise_std > 0.0 {
        Some(Normal::new(0.0, cfg.noise_std).expect("validated std"))
    } else {
        None
    };
    let f_lo = (cfg.duration_range.0 * cfg.fps).floor() as usize;
    let f_hi = ((cfg.duration_range.1 * cfg.fps).floor() as usize).max(f_lo);
    let neutral = neutral_pose();
    let joints_by_class: Vec<Vec<usize>> = (0..cfg.num_classes)
        .map(|k| class_joints(k, cfg.num_classes))
        .collect();

    let mut sequences = Vec::with_capacity(cfg.num_sequences);
    for s in 0..cfg.num_sequences {
        let f = rng.random_range(f_lo..=f_hi);
        let (smin, smax) = cfg.spans_per_sequence_range;
        let n_spans = rng.random_range(smin..=smax);
        let placed = place_spans(&mut rng, f, n_spans, smin, cfg.num_classes, cfg.fps)?;

        let mut frames = vec![neutral; f];
        for &(sf, ef, class) in &placed {
            for (frame_idx, frame) in frames.iter_mut().enumerate().take(ef).skip(sf) {
                let tau = (frame_idx - sf) as f64 / cfg.fps;
                for &j in &joints_by_class[class] {
                    for axis in 0..3 {
                        frame[j][axis] += motif_displacement(class, j, axis, tau);
                    }
                }
            }
        }
        if let Some(dist) = noise {
            for frame in &mut frames {
                for joint in frame.iter_mut() {
                    for v in joint.iter_mut() {
                        *v += dist.sample(&mut rng);
                    }
                }
            }
        }

        sequences.push(MotionSequence {
            id: format!("seq_{s:04}"),
            fps: cfg.fps,
            frames,
            spans: placed
                .iter()
                .map(|&(sf, ef, class)| LabeledSpan {
                    class_id: class,
                    t_start: sf as f64 / cfg.fps,
                    t_end: ef as f64 / cfg.fps,
                })
                .collect(),
        });
    }

    let dataset = Dataset {
        fps: cfg.fps,
        class_names: (0..cfg.num_classes).map(|k| format!("motif_{k:02}")).collect(),
        sequences,
    };
    dataset.validate()?;
    Ok(dataset)
}
