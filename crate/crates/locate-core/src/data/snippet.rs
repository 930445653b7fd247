//! Snippet extraction: a fixed-length sequence of overlapping pose windows.
//!
//! The model consumes exactly `T` elements regardless of clip length. Each
//! element is a snippet of `N_f` contiguous frames, flattened. Snippet `i`
//! starts at `s_i = round(i · (F − N_f) / (T − 1))`: for short clips
//! neighboring snippets overlap, for long clips frames between snippets are
//! dropped, and in both cases the first snippet starts at frame 0 and the
//! last ends at frame F.

use super::{MotionSequence, SnippetTensor, FRAME_DIM};
use crate::error::{Error, Result};

/// Start frame of snippet `i` out of `t` for a clip of `f` frames.
fn snippet_start(i: usize, f: usize, n_f: usize, t: usize) -> usize {
    if t == 1 {
        return 0;
    }
    let span = (f - n_f) as f64;
    (i as f64 * span / (t - 1) as f64).round() as usize
}

/// Cut a (normalized) sequence into `t` snippets of `n_f` frames each.
pub fn snippetize(seq: &MotionSequence, n_f: usize, t: usize) -> Result<SnippetTensor> {
    if n_f == 0 || t == 0 {
        return Err(Error::InvalidConfig {
            field: if n_f == 0 { "snippet_frames" } else { "seq_len" },
            problem: "must be at least 1".into(),
        });
    }
    let f = seq.frames.len();
    if f < n_f {
        return Err(Error::SequenceTooShort {
            id: seq.id.clone(),
            frames: f,
            needed: n_f,
        });
    }
    let dim = FRAME_DIM * n_f;
    let mut data = Vec::with_capacity(t * dim);
    for i in 0..t {
        let start = snippet_start(i, f, n_f, t);
        debug_assert!(start + n_f <= f);
        for frame in &seq.frames[start..start + n_f] {
            for joint in frame {
                data.extend_from_slice(joint);
            }
        }
    }
    Ok(SnippetTensor {
        data,
        t,
        n_f,
        source_duration: seq.duration(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Frame, NUM_JOINTS};

    /// Sequence whose frame `k` has every coordinate equal to `k`, making
    /// selection visible in the output.
    fn counting_sequence(f: usize) -> MotionSequence {
        MotionSequence {
            id: "counting".into(),
            fps: 10.0,
            frames: (0..f)
                .map(|k| [[k as f64; 3]; NUM_JOINTS] as Frame)
                .collect(),
            spans: vec![],
        }
    }

    #[test]
    fn exact_cover_single_snippet() {
        let seq = counting_sequence(8);
        let s = snippetize(&seq, 8, 1).unwrap();
        assert_eq!(s.t, 1);
        assert_eq!(s.data.len(), 8 * FRAME_DIM);
        // All 8 frames present in order.
        for k in 0..8 {
            assert_eq!(s.data[k * FRAME_DIM], k as f64);
        }
    }

    #[test]
    fn overlapping_snippets_start_at_0_and_4() {
        let seq = counting_sequence(12);
        let s = snippetize(&seq, 8, 2).unwrap();
        assert_eq!(s.data[0], 0.0);
        assert_eq!(s.data[FRAME_DIM * 8], 4.0); // second snippet starts at frame 4
    }

    #[test]
    fn long_clip_last_snippet_reaches_the_end() {
        let seq = counting_sequence(1000);
        let s = snippetize(&seq, 8, 100).unwrap();
        // s_99 = round(99 * 992 / 99) = 992; the snippet covers 992..1000.
        let last = &s.data[99 * s.dim()..];
        assert_eq!(last[0], 992.0);
        assert_eq!(last[s.dim() - 1], 999.0);
    }

    #[test]
    fn starts_are_nondecreasing_and_in_range() {
        for (f, n_f, t) in [(8, 8, 1), (12, 8, 2), (50, 4, 100), (1000, 8, 100), (9, 8, 5)] {
            let mut prev = 0;
            for i in 0..t {
                let s = snippet_start(i, f, n_f, t);
                assert!(s >= prev, "f={f} t={t} i={i}");
                assert!(s + n_f <= f);
                prev = s;
            }
            assert_eq!(snippet_start(0, f, n_f, t), 0);
        }
    }

    #[test]
    fn pure_selection_no_interpolation() {
        // Every output value must literally appear in some input frame; with
        // counting frames that means every value is an integer < F.
        let seq = counting_sequence(37);
        let s = snippetize(&seq, 4, 10).unwrap();
        for &v in &s.data {
            assert_eq!(v.fract(), 0.0);
            assert!(v >= 0.0 && v < 37.0);
        }
    }

    #[test]
    fn flattening_is_frame_joint_coordinate_order() {
        let mut frames = vec![[[0.0; 3]; NUM_JOINTS]; 4];
        // Frame f, joint j, coord c carries value f*1000 + j*10 + c.
        for (f, frame) in frames.iter_mut().enumerate() {
            for (j, joint) in frame.iter_mut().enumerate() {
                for (c, v) in joint.iter_mut().enumerate() {
                    *v = (f * 1000 + j * 10 + c) as f64;
                }
            }
        }
        let seq = MotionSequence {
            id: "order".into(),
            fps: 10.0,
            frames,
            spans: vec![],
        };
        let s = snippetize(&seq, 2, 1).unwrap();
        // Row layout: frame-major, then joint, then coordinate.
        assert_eq!(s.data[0], 0.0); // f0 j0 x
        assert_eq!(s.data[1], 1.0); // f0 j0 y
        assert_eq!(s.data[3], 10.0); // f0 j1 x
        assert_eq!(s.data[FRAME_DIM], 1000.0); // f1 j0 x
        assert_eq!(s.data[FRAME_DIM + 3 * 21 + 2], 1212.0); // f1 j21 z
    }

    #[test]
    fn too_short_sequence_is_rejected() {
        let seq = counting_sequence(5);
        let err = snippetize(&seq, 8, 3).unwrap_err();
        assert!(matches!(err, Error::SequenceTooShort { needed: 8, .. }), "{err}");
    }

    #[test]
    fn zero_t_is_rejected() {
        let seq = counting_sequence(8);
        assert!(snippetize(&seq, 8, 0).is_err());
        assert!(snippetize(&seq, 0, 1).is_err());
    }
}
