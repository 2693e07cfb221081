#![allow(dead_code)]

use hiermaml::harness::{ExperimentConfig, Method};

/// A few seconds of work end to end: 4×4 grid, short windows, few epochs.
pub fn small_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    let s = &mut cfg.data.synthetic;
    s.rows = 4;
    s.cols = 4;
    s.test_fraction = 0.25;
    s.seq_len = 4;
    s.n_features = 3;
    s.pretrain_tasks = 6;
    cfg.model.hidden = 4;
    cfg.pretrain.epochs = 3;
    cfg.meta.outer_epochs = 2;
    cfg.meta.task_batch_size = 4;
    cfg.hierarchy.max_splits = 2;
    cfg.condition.clusters = 2;
    cfg.method = Method::AdaptiveMamlB;
    cfg.seed = seed;
    cfg.resolved()
}
