//! Fixtures shared by the benchmarks.

use alesal_core::pipeline::synthetic_examples;
use alesal_core::{DatasetConfig, LabeledExample, PreprocessParams};

/// `per_class` preprocessed synthetic windows of each class, default geometry.
pub fn windows(per_class: usize, seed: u64) -> Vec<LabeledExample> {
    let config = DatasetConfig { per_class: [per_class; 3], ..DatasetConfig::default() };
    synthetic_examples(&config, &PreprocessParams::default(), seed).expect("default synthetic set")
}
