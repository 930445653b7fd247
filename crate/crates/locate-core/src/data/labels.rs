//! String-label grouping.
//!
//! Source corpora label actions with free-form strings at a finer grain than
//! a detector wants to predict. A [`LabelMap`] folds several source labels
//! into one class id ("jump", "hop" → one jumping class); spans whose label
//! has no entry are dropped, and the caller gets the dropped count so nothing
//! disappears silently.

use super::LabeledSpan;
use crate::error::{Error, Result};

/// A span as it comes from an annotation source: string label, times in
/// seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSpan {
    pub label: String,
    pub t_start: f64,
    pub t_end: f64,
}

/// Mapping from source labels to target class ids, with the target class
/// vocabulary.
#[derive(Debug, Clone)]
pub struct LabelMap {
    mapping: Vec<(String, usize)>,
    class_names: Vec<String>,
}

impl LabelMap {
    pub fn new(mapping: Vec<(String, usize)>, class_names: Vec<String>) -> Result<Self> {
        for (i, a) in class_names.iter().enumerate() {
            if class_names[..i].contains(a) {
                return Err(Error::InvalidConfig {
                    field: "class_names",
                    problem: format!("duplicate class name `{a}`"),
                });
            }
        }
        for (source, target) in &mapping {
            if *target >= class_names.len() {
                return Err(Error::ClassOutOfRange {
                    class: *target,
                    classes: class_names.len(),
                });
            }
            let _ = source;
        }
        Ok(LabelMap {
            mapping,
            class_names,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    fn target_of(&self, label: &str) -> Option<usize> {
        self.mapping
            .iter()
            .find(|(source, _)| source == label)
            .map(|&(_, target)| target)
    }
}

/// Relabel spans through the map. Returns the kept spans (times untouched)
/// and the number dropped for having no mapping.
pub fn map_labels(spans: &[RawSpan], map: &LabelMap) -> (Vec<LabeledSpan>, usize) {
    let mut kept = Vec::new();
    let mut dropped = 0;
    for span in spans {
        match map.target_of(&span.label) {
            Some(class_id) => kept.push(LabeledSpan {
                class_id,
                t_start: span.t_start,
                t_end: span.t_end,
            }),
            None => dropped += 1,
        }
    }
    (kept, dropped)
}
