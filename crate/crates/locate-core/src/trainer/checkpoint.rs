//! Binary model checkpoints.
//!
//! Layout: magic bytes `LOCT`, a `u32` format version, a length-prefixed JSON
//! header (model config plus training metadata), then one record per tensor in
//! canonical parameter order — first the parameters themselves, then the Adam
//! first moments as `adam.m.<name>`, then the second moments as
//! `adam.v.<name>`. Each record is `u32` name length, the UTF-8 name, `u32`
//! rank, the dimensions as `u64`s, and the values as little-endian `f64`s.
//!
//! Loading is strict: names and shapes must match what the stored config
//! implies, and trailing bytes are an error, so truncation or tampering is
//! caught rather than half-applied.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::matching::ClassStats;
use crate::model::{ModelConfig, ModelParams};

use super::OptimizerState;

const MAGIC: [u8; 4] = *b"LOCT";
const VERSION: u32 = 1;
/// Upper bound on the JSON header, to reject garbage length prefixes early.
const MAX_HEADER_BYTES: u64 = 1 << 20;

/// Everything needed to resume training or run evaluation-only: the model,
/// its optimizer state, and the class statistics the loss was built from.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub opt: OptimizerState,
    /// Seed the training data shuffle ran under.
    pub data_seed: u64,
    /// Per-class span counts from the training set, no-action slot last.
    pub counts: Vec<u64>,
    pub cb_beta: f64,
    pub cb_gamma: f64,
}

impl Checkpoint {
    /// Rebuild the class-balanced statistics carried in the checkpoint, so
    /// evaluation-only runs need no access to the training data.
    pub fn class_stats(&self) -> Result<ClassStats> {
        ClassStats::new(self.counts.clone(), self.cb_beta, self.cb_gamma)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    data_seed: u64,
    counts: Vec<u64>,
    cb_beta: f64,
    cb_gamma: f64,
}

fn corrupt(path: &Path, what: impl Into<String>) -> Error {
    Error::Checkpoint(format!("{}: {}", path.display(), what.into()))
}

fn write_record(w: &mut impl Write, name: &str, t: &Tensor) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    ckpt.config.validate()?;
    let n = ckpt.params.num_tensors();
    if ckpt.opt.m.len() != n || ckpt.opt.v.len() != n {
        return Err(Error::ShapeMismatch {
            op: "save_checkpoint",
            lhs: vec![n],
            rhs: vec![ckpt.opt.m.len(), ckpt.opt.v.len()],
        });
    }
    let mut bad = None;
    ckpt.params.for_each(&mut |name, t| {
        if bad.is_none() && !t.is_finite() {
            bad = Some(name);
        }
    });
    if let Some(name) = bad {
        return Err(Error::NonFinite {
            op: format!("checkpoint parameter {name}"),
        });
    }

    let header = Header {
        config: ckpt.config,
        step: ckpt.opt.step,
        data_seed: ckpt.data_seed,
        counts: ckpt.counts.clone(),
        cb_beta: ckpt.cb_beta,
        cb_gamma: ckpt.cb_gamma,
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::json(path.to_path_buf(), e))?;

    let io = |e| Error::io(path.to_path_buf(), e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut go = || -> std::io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header_json.len() as u64).to_le_bytes())?;
        w.write_all(&header_json)?;
        Ok(())
    };
    go().map_err(io)?;

    let mut status = Ok(());
    ckpt.params.for_each(&mut |name, t| {
        if status.is_ok() {
            status = write_record(&mut w, &name, t);
        }
    });
    let mut i = 0;
    ckpt.params.for_each(&mut |name, _| {
        if status.is_ok() {
            status = write_record(&mut w, &format!("adam.m.{name}"), &ckpt.opt.m[i]);
        }
        i += 1;
    });
    i = 0;
    ckpt.params.for_each(&mut |name, _| {
        if status.is_ok() {
            status = write_record(&mut w, &format!("adam.v.{name}"), &ckpt.opt.v[i]);
        }
        i += 1;
    });
    status.map_err(io)?;
    w.flush().map_err(io)
}

struct RecordReader<'a, R> {
    r: R,
    path: &'a Path,
}

impl<R: Read> RecordReader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.r
            .read_exact(&mut buf)
            .map_err(|e| Error::io(self.path.to_path_buf(), e))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    /// Read one record and copy it into `dst`, which already has the shape the
    /// config dictates. Any disagreement is corruption.
    fn record_into(&mut self, want_name: &str, dst: &mut Tensor) -> Result<()> {
        let name_len = self.u32()? as usize;
        if name_len > 4096 {
            return Err(corrupt(self.path, format!("absurd name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        self.r
            .read_exact(&mut name)
            .map_err(|e| Error::io(self.path.to_path_buf(), e))?;
        let name = String::from_utf8(name)
            .map_err(|_| corrupt(self.path, "record name is not UTF-8"))?;
        if name != want_name {
            return Err(corrupt(
                self.path,
                format!("expected record {want_name}, found {name}"),
            ));
        }
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        if shape != dst.shape() {
            return Err(corrupt(
                self.path,
                format!("{name}: stored shape {shape:?} does not match {:?}", dst.shape()),
            ));
        }
        for v in dst.data_mut() {
            *v = f64::from_le_bytes(self.bytes()?);
        }
        Ok(())
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut rr = RecordReader {
        r: BufReader::new(file),
        path,
    };

    let magic: [u8; 4] = rr.bytes()?;
    if magic != MAGIC {
        return Err(Error::CheckpointVersion {
            found: format!("magic {magic:02x?}"),
            expected: format!("magic {MAGIC:02x?}"),
        });
    }
    let version = rr.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: format!("format version {version}"),
            expected: format!("format version {VERSION}"),
        });
    }
    let header_len = rr.u64()?;
    if header_len > MAX_HEADER_BYTES {
        return Err(corrupt(path, format!("header claims {header_len} bytes")));
    }
    let mut header_json = vec![0u8; header_len as usize];
    rr.r
        .read_exact(&mut header_json)
        .map_err(|e| Error::io(path.to_path_buf(), e))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| corrupt(path, format!("bad header: {e}")))?;
    header.config.validate()?;

    // Skeleton with the right shapes, then overwrite every tensor from disk.
    let mut params = ModelParams::init(&header.config)?;
    let mut opt = OptimizerState::new(&params);
    let mut names = Vec::new();
    params.for_each(&mut |name, _| names.push(name));

    let mut status = Ok(());
    params.for_each_mut(&mut |name, t| {
        if status.is_ok() {
            status = rr.record_into(&name, t);
        }
    });
    status?;
    for (name, t) in names.iter().zip(opt.m.iter_mut()) {
        rr.record_into(&format!("adam.m.{name}"), t)?;
    }
    for (name, t) in names.iter().zip(opt.v.iter_mut()) {
        rr.record_into(&format!("adam.v.{name}"), t)?;
    }
    opt.step = header.step;

    let mut trailing = [0u8; 1];
    match rr.r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(corrupt(path, "trailing bytes after the last record")),
        Err(e) => return Err(Error::io(path.to_path_buf(), e)),
    }

    Ok(Checkpoint {
        config: header.config,
        params,
        opt,
        data_seed: header.data_seed,
        counts: header.counts,
        cb_beta: header.cb_beta,
        cb_gamma: header.cb_gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SnippetTensor;
    use crate::model::predict;
    use crate::trainer::{adam_step, TrainConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            t: 5,
            n_f: 1,
            c: 4,
            l_e: 1,
            l_d: 1,
            h: 2,
            k: 2,
            n_a: 3,
            c_cls: 2,
            ffn_width: 8,
            seed: 7,
        }
    }

    fn snippets(cfg: &ModelConfig) -> SnippetTensor {
        let dim = 66 * cfg.n_f;
        SnippetTensor {
            data: (0..cfg.t * dim).map(|i| (i as f64 * 0.37).sin()).collect(),
            t: cfg.t,
            n_f: cfg.n_f,
            source_duration: 4.0,
        }
    }

    /// A checkpoint whose optimizer state is not all zeros, so the round-trip
    /// actually exercises the moment records.
    fn stepped_checkpoint() -> Checkpoint {
        let cfg = cfg();
        let mut params = ModelParams::init(&cfg).unwrap();
        let mut opt = OptimizerState::new(&params);
        let mut grads = Vec::new();
        params.for_each(&mut |_, t| {
            grads.push(Tensor::from_fn(t.shape(), |i| ((i + 1) as f64 * 0.11).cos()));
        });
        adam_step(&mut params, &grads, &mut opt, &TrainConfig::default()).unwrap();
        Checkpoint {
            config: cfg,
            params,
            opt,
            data_seed: 42,
            counts: vec![3, 1, 16],
            cb_beta: 0.99,
            cb_gamma: 2.0,
        }
    }

    #[test]
    fn round_trip_preserves_forward_outputs_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.loct");
        let ckpt = stepped_checkpoint();
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        let snip = snippets(&ckpt.config);
        let before = predict(&ckpt.config, &ckpt.params, &snip).unwrap();
        let after = predict(&loaded.config, &loaded.params, &snip).unwrap();
        assert_eq!(before.class_logits, after.class_logits);
        assert_eq!(before.spans, after.spans);

        assert_eq!(loaded.opt.step, 1);
        assert_eq!(loaded.opt.m, ckpt.opt.m);
        assert_eq!(loaded.opt.v, ckpt.opt.v);
        assert_eq!(loaded.data_seed, 42);
    }

    #[test]
    fn checkpoint_carries_class_statistics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.loct");
        save_checkpoint(&path, &stepped_checkpoint()).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.counts, vec![3, 1, 16]);
        let stats = loaded.class_stats().unwrap();
        // Rarer class, larger weight.
        assert!(stats.weight(1).unwrap() > stats.weight(0).unwrap());
    }

    #[test]
    fn tampered_shape_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.loct");
        save_checkpoint(&path, &stepped_checkpoint()).unwrap();

        // Rewrite the first record's leading dimension to 999. The record
        // starts right after the header: 4 magic + 4 version + 8 length +
        // header, then 4 name-length bytes + name + 4 rank bytes.
        let mut bytes = std::fs::read(&path).unwrap();
        let header_len =
            u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut pos = 16 + header_len;
        let name_len =
            u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4 + name_len + 4;
        bytes[pos..pos + 8].copy_from_slice(&999u64.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();

        let err = load_checkpoint(&path).unwrap_err();
        assert!(
            matches!(err, Error::Checkpoint(ref msg) if msg.contains("999")),
            "{err}"
        );
    }

    #[test]
    fn wrong_magic_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.loct");
        save_checkpoint(&path, &stepped_checkpoint()).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        let orig = bytes.clone();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            Error::CheckpointVersion { .. }
        ));

        let mut bytes = orig;
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            Error::CheckpointVersion { .. }
        ));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.loct");
        save_checkpoint(&path, &stepped_checkpoint()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.loct");
        save_checkpoint(&path, &stepped_checkpoint()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(
            matches!(err, Error::Checkpoint(ref msg) if msg.contains("trailing")),
            "{err}"
        );
    }
}
