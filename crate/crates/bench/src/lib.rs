//! Shared fixtures for the criterion benchmarks.

use gres_core::dataset::SyntheticCorpus;
use gres_core::trainer::{synthetic_splits, RunConfig};

/// Default-shaped config with a small corpus, for timing single steps.
pub fn bench_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.train_groups = 4;
    c.test_groups = 2;
    c
}

pub fn bench_corpus(config: &RunConfig) -> SyntheticCorpus {
    synthetic_splits(config).expect("default config generates").0
}
