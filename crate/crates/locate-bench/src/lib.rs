//! Shared fixtures for the criterion benchmarks; no library code of its own.

use locate_core::data::{generate_synthetic, SyntheticConfig};
use locate_core::{Dataset, ModelConfig};

/// A small but structurally complete model: two layers per side, real
/// multi-head deformable attention, ten queries.
pub fn bench_model() -> ModelConfig {
    ModelConfig {
        t: 50,
        n_f: 4,
        c: 64,
        l_e: 2,
        l_d: 2,
        h: 2,
        k: 2,
        n_a: 10,
        c_cls: 5,
        ffn_width: 128,
        seed: 0,
    }
}

/// A handful of mid-length synthetic sequences matching [`bench_model`]'s
/// class count.
pub fn bench_data(num_sequences: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticConfig {
        num_sequences,
        num_classes: 5,
        duration_range: (6.0, 10.0),
        seed,
        ..SyntheticConfig::default()
    })
    .expect("fixture generates")
}
