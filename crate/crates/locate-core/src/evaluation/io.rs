//! Detection interchange: JSON lines, one object per detection.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::detect::Detection;

/// Write detections as JSON lines with a leading `#` comment describing the
/// fields. Lines look like
/// `{"seq":"seq_003","class":2,"start":1.25,"end":2.75,"score":0.91}`.
pub fn write_detections_jsonl(path: impl AsRef<Path>, dets: &[Detection]) -> Result<()> {
    let path = path.as_ref();
    for d in dets {
        d.validate()?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    (|| {
        writeln!(
            w,
            "# one detection per line: seq, class, start/end seconds, score"
        )?;
        for d in dets {
            let line = serde_json::to_string(d).expect("detection serializes");
            writeln!(w, "{line}")?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Read a JSONL detection file, skipping blank lines and `#` comments.
/// Every detection is validated on the way in.
pub fn read_detections_jsonl(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let det: Detection =
            serde_json::from_str(trimmed).map_err(|e| Error::json(path, e))?;
        det.validate()?;
        out.push(det);
    }
    Ok(out)
}
