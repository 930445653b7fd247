//! Network hyperparameters.

use serde::{Deserialize, Serialize};

use crate::data::FRAME_DIM;
use crate::error::{Error, Result};

/// Every size the network depends on. `validate` before use; `Default` is
/// the full-size configuration, which most tests shrink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Temporal positions after snippetizing.
    pub t: usize,
    /// Frames per snippet; the input width is `66 · n_f`.
    pub n_f: usize,
    /// Model width.
    pub c: usize,
    /// Encoder layers.
    pub l_e: usize,
    /// Decoder layers.
    pub l_d: usize,
    /// Attention heads.
    pub h: usize,
    /// Sampling points per head.
    pub k: usize,
    /// Action queries.
    pub n_a: usize,
    /// Real action classes (the classifier adds one no-action slot).
    pub c_cls: usize,
    /// Feed-forward hidden width.
    pub ffn_width: usize,
    /// Parameter-initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t: 100,
            n_f: 8,
            c: 256,
            l_e: 4,
            l_d: 4,
            h: 4,
            k: 4,
            n_a: 30,
            c_cls: 5,
            ffn_width: 1024,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Snippet feature width `D = 66 · n_f`.
    pub fn input_dim(&self) -> usize {
        FRAME_DIM * self.n_f
    }

    /// Per-head channel width.
    pub fn head_dim(&self) -> usize {
        self.c / self.h
    }

    pub fn validate(&self) -> Result<()> {
        let positive: [(&'static str, usize); 7] = [
            ("t", self.t),
            ("n_f", self.n_f),
            ("c", self.c),
            ("h", self.h),
            ("k", self.k),
            ("n_a", self.n_a),
            ("c_cls", self.c_cls),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig {
                    field,
                    problem: "must be positive".into(),
                });
            }
        }
        if self.c % self.h != 0 {
            return Err(Error::InvalidConfig {
                field: "c",
                problem: format!("width {} not divisible by {} heads", self.c, self.h),
            });
        }
        if (self.l_e > 0 || self.l_d > 0) && self.ffn_width == 0 {
            return Err(Error::InvalidConfig {
                field: "ffn_width",
                problem: "must be positive when any layer exists".into(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let cfg = ModelConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.input_dim(), 528);
        assert_eq!(cfg.head_dim(), 64);
    }

    #[test]
    fn width_must_divide_by_heads() {
        let cfg = ModelConfig {
            c: 10,
            h: 4,
            ..ModelConfig::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(Error::InvalidConfig { field: "c", .. })
        ));
    }

    #[test]
    fn zero_sizes_rejected() {
        for field in 0..7 {
            let mut cfg = ModelConfig::default();
            match field {
                0 => cfg.t = 0,
                1 => cfg.n_f = 0,
                2 => cfg.c = 0,
                3 => cfg.h = 0,
                4 => cfg.k = 0,
                5 => cfg.n_a = 0,
                _ => cfg.c_cls = 0,
            }
            assert!(cfg.validate().is_err(), "field {field}");
        }
    }
}
