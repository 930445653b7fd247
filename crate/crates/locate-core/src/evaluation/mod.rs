//! Detection-quality measurement.
//!
//! The chain runs: decode raw network outputs into scored detections, thin
//! them with temporal NMS, then score against ground truth — interpolated AP
//! per class, mAP swept over tIoU thresholds, a class-agnostic confusion
//! matrix for recognition-vs-localization diagnosis, and inter-annotator
//! agreement expressed in the same mAP currency.

mod ap;
mod confusion;
mod detect;
mod human;
mod io;

pub use ap::{
    average_precision, default_thresholds, map_sweep, EvalReport, GroundTruth, Interpolation,
};
pub use confusion::{confusion_matrix, ConfusionMatrix};
pub use detect::{decode_predictions, temporal_nms, Detection};
pub use human::{human_agreement_map, GroundTruthChoice, SequenceAnnotations};
pub use io::{read_detections_jsonl, write_detections_jsonl};
