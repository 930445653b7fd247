//! Skeleton sequences, labels, and everything that turns them into model
//! input: canonical-frame normalization, snippet extraction, label-map
//! application, the synthetic motion generator, and dataset (de)serialization.
//!
//! Units are part of the contract here. Joint positions are meters, span
//! times are **seconds** everywhere in this module; conversion to the
//! normalized [0,1] coordinates the model and losses work in happens at the
//! matching/loss boundary, not here.

mod labels;
mod normalize;
mod snippet;
mod synth;

pub use labels::{map_labels, LabelMap, RawSpan};
pub use normalize::normalize_skeleton;
pub use snippet::snippetize;
pub use synth::{class_joints, generate_synthetic, neutral_pose, SyntheticConfig};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Number of skeleton joints. SMPL body convention with both hands excluded.
pub const NUM_JOINTS: usize = 22;
/// Coordinates per frame after flattening.
pub const FRAME_DIM: usize = NUM_JOINTS * 3;

/// Joint indices the preprocessing relies on (SMPL 22-joint order).
pub const PELVIS: usize = 0;
pub const LEFT_HIP: usize = 1;
pub const RIGHT_HIP: usize = 2;
pub const LEFT_SHOULDER: usize = 16;
pub const RIGHT_SHOULDER: usize = 17;

/// One pose: 22 joints × (x, y, z) in meters.
pub type Frame = [[f64; 3]; NUM_JOINTS];

/// A labeled action interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSpan {
    #[serde(rename = "class")]
    pub class_id: usize,
    #[serde(rename = "start")]
    pub t_start: f64,
    #[serde(rename = "end")]
    pub t_end: f64,
}

/// A motion clip with its action annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub id: String,
    /// Frames per second; shared across a dataset.
    pub fps: f64,
    pub frames: Vec<Frame>,
    pub spans: Vec<LabeledSpan>,
}

impl MotionSequence {
    /// Clip length in seconds.
    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    fn validate(&self, num_classes: usize) -> Result<()> {
        let fail = |problem: String| {
            Err(Error::InvalidSequence {
                id: self.id.clone(),
                problem,
            })
        };
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return fail(format!("fps must be a positive real, got {}", self.fps));
        }
        if self.frames.is_empty() {
            return fail("no frames".into());
        }
        for (f, frame) in self.frames.iter().enumerate() {
            if frame.iter().flatten().any(|v| !v.is_finite()) {
                return fail(format!("frame {f} contains a non-finite coordinate"));
            }
        }
        let duration = self.duration();
        for (i, span) in self.spans.iter().enumerate() {
            if !(span.t_start.is_finite() && span.t_end.is_finite()) {
                return fail(format!("span {i} has non-finite times"));
            }
            if span.t_start < 0.0 || span.t_start >= span.t_end || span.t_end > duration {
                return fail(format!(
                    "span {i} [{}, {}] violates 0 <= start < end <= duration ({duration})",
                    span.t_start, span.t_end
                ));
            }
            if span.class_id >= num_classes {
                return fail(format!(
                    "span {i} has class {} but the dataset declares {num_classes} classes",
                    span.class_id
                ));
            }
        }
        Ok(())
    }
}

/// A set of motion sequences sharing fps and a class vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub fps: f64,
    pub class_names: Vec<String>,
    pub sequences: Vec<MotionSequence>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::InvalidDataset(format!(
                "fps must be a positive real, got {}",
                self.fps
            )));
        }
        for (i, a) in self.class_names.iter().enumerate() {
            if self.class_names[..i].contains(a) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate class name `{a}`"
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for seq in &self.sequences {
            if !seen.insert(&seq.id) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate sequence id `{}`",
                    seq.id
                )));
            }
            seq.validate(self.class_names.len())?;
        }
        Ok(())
    }

    /// Reject sequences too short to yield one snippet of `n_f` frames.
    pub fn require_min_frames(&self, n_f: usize) -> Result<()> {
        for seq in &self.sequences {
            if seq.frames.len() < n_f {
                return Err(Error::SequenceTooShort {
                    id: seq.id.clone(),
                    frames: seq.frames.len(),
                    needed: n_f,
                });
            }
        }
        Ok(())
    }
}

/// Snippet features for one sequence: `T` rows of `D = 66·N_f` values.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetTensor {
    /// Row-major `T × D`.
    pub data: Vec<f64>,
    pub t: usize,
    pub n_f: usize,
    /// Length of the source clip in seconds; needed to map normalized span
    /// coordinates back to time.
    pub source_duration: f64,
}

impl SnippetTensor {
    pub fn dim(&self) -> usize {
        FRAME_DIM * self.n_f
    }
}

// ---- dataset JSON ----

#[derive(Serialize, Deserialize)]
struct WireSequence {
    id: String,
    frames: Vec<Frame>,
    spans: Vec<LabeledSpan>,
}

#[derive(Serialize, Deserialize)]
struct WireDataset {
    fps: f64,
    class_names: Vec<String>,
    sequences: Vec<WireSequence>,
}

/// Read and validate a dataset JSON file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let wire: WireDataset = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::json(path, e))?;
    let dataset = Dataset {
        fps: wire.fps,
        class_names: wire.class_names,
        sequences: wire
            .sequences
            .into_iter()
            .map(|s| MotionSequence {
                id: s.id,
                fps: wire.fps,
                frames: s.frames,
                spans: s.spans,
            })
            .collect(),
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Write a dataset as JSON. Numbers use the shortest representation that
/// round-trips, so save → load is bit-exact.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    dataset.validate()?;
    let wire = WireDataset {
        fps: dataset.fps,
        class_names: dataset.class_names.clone(),
        sequences: dataset
            .sequences
            .iter()
            .map(|s| WireSequence {
                id: s.id.clone(),
                frames: s.frames.clone(),
                spans: s.spans.clone(),
            })
            .collect(),
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut writer, &wire).map_err(|e| Error::json(path, e))?;
    use std::io::Write;
    writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}
