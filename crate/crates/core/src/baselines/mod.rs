//! Comparison methods: pooled supervised baselines, Transfer-MAML, and
//! cluster-conditioned MAML.

mod cluster;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::OptimizerState;
use crate::error::{Error, Result};
use crate::metalearn::{evaluate_task_audited, train_origin_maml, LabelAudit, Learner, MetaConfig, MetaOutcome, TaskEvaluation};
use crate::seed::derive_seed;
use crate::tasks::{SampleWindow, Task};

pub use cluster::{
    decode_clusters, encode_clusters, kmeans, load_clusters, save_clusters, task_embedding, train_condition_maml,
    ClusterModel, KMeans,
};

/// Mini-batch Adam on pooled samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr: 0.001,
            seed: 0,
        }
    }
}

impl FitConfig {
    /// Same optimizer, rate, and number of Adam steps as a meta run over
    /// tasks with `samples_per_task` samples each.
    pub fn matching(meta: &MetaConfig, samples_per_task: usize) -> Self {
        Self {
            epochs: meta.outer_epochs * meta.inner_epochs,
            batch_size: (meta.task_batch_size * samples_per_task).max(1),
            lr: meta.outer_lr,
            seed: meta.seed,
        }
    }
}

/// Trains on `samples` in shuffled mini-batches; returns the mean batch loss
/// of every epoch.
pub fn fit_pooled<M: Learner>(model: &mut M, samples: &[&SampleWindow], cfg: &FitConfig) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Input("pooled training needs at least one sample".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "pooled", 0));
    let mut optimizer = OptimizerState::adam(model.params().len());
    let mut order: Vec<&SampleWindow> = samples.to_vec();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let windows: Vec<&[f64]> = chunk.iter().map(|s| s.features.as_slice()).collect();
            let labels: Vec<f64> = chunk.iter().map(|s| s.label).collect();
            let (loss, grad) = model.loss_and_gradient(&windows, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step: epoch,
                    detail: format!("pooled loss is {loss}"),
                });
            }
            let mut params = model.params().to_vec();
            optimizer.step(&mut params, &grad, cfg.lr)?;
            model.set_params(&params)?;
            total += loss;
            batches += 1;
        }
        losses.push(total / batches as f64);
    }
    Ok(losses)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineVariant {
    /// Train on train support and query; test directly.
    A,
    /// Also train on the test support sets; test directly.
    B,
    /// As A, then fine-tune per test task on its support set.
    C,
}

fn all_samples<'a>(tasks: &[&'a Task]) -> Vec<&'a SampleWindow> {
    tasks.iter().flat_map(|t| t.support.iter().chain(&t.query)).collect()
}

/// Pooled supervised training for one baseline variant.
pub fn train_baseline<M: Learner>(
    variant: BaselineVariant,
    train: &[&Task],
    test: &[&Task],
    init: &M,
    fit: &FitConfig,
) -> Result<(M, Vec<f64>)> {
    let mut samples = all_samples(train);
    if variant == BaselineVariant::B {
        samples.extend(test.iter().flat_map(|t| t.support.iter()));
    }
    let mut model = init.clone();
    let losses = fit_pooled(&mut model, &samples, fit)?;
    Ok((model, losses))
}

/// Scores test tasks under a baseline's protocol. Only variant C adapts.
pub fn evaluate_baseline<M: Learner>(
    variant: BaselineVariant,
    model: &M,
    test: &[&Task],
    meta: &MetaConfig,
    audit: &LabelAudit,
) -> Result<Vec<TaskEvaluation>> {
    let (alpha, steps) = match variant {
        BaselineVariant::C => (meta.inner_lr, meta.adaptation_steps),
        _ => (0.0, 0),
    };
    test.iter()
        .map(|t| evaluate_task_audited(model, t, alpha, steps, audit))
        .collect()
}

/// Pooled training on the train support sets, then MAML from those weights.
/// Also returns the pooled per-epoch losses.
pub fn train_transfer_maml<M: Learner>(
    train: &[&Task],
    init: &M,
    fit: &FitConfig,
    meta: &MetaConfig,
) -> Result<(MetaOutcome<M>, Vec<f64>)> {
    let support: Vec<&SampleWindow> = train.iter().flat_map(|t| t.support.iter()).collect();
    let mut pooled = init.clone();
    let losses = fit_pooled(&mut pooled, &support, fit)?;
    Ok((train_origin_maml(train, &pooled, meta)?, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metalearn::scalar::{task, Scalar};

    fn tasks() -> Vec<Task> {
        (0..4)
            .map(|i| {
                let s = 2.0 + 0.1 * i as f64;
                task(i, &[(1.0, s), (2.0, 2.0 * s)], &[(1.0, s), (3.0, 3.0 * s)])
            })
            .collect()
    }

    #[test]
    fn pooled_fit_learns_the_slope() {
        let ts = tasks();
        let refs: Vec<&Task> = ts.iter().collect();
        let mut m = Scalar(vec![0.0]);
        let fit = FitConfig {
            epochs: 300,
            batch_size: 4,
            lr: 0.05,
            seed: 1,
        };
        let losses = fit_pooled(&mut m, &all_samples(&refs), &fit).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        assert!((m.0[0] - 2.15).abs() < 0.05, "{}", m.0[0]);
    }

    #[test]
    fn c_without_fine_tuning_equals_a() {
        let ts = tasks();
        let refs: Vec<&Task> = ts.iter().collect();
        let fit = FitConfig {
            epochs: 3,
            batch_size: 2,
            lr: 0.01,
            seed: 0,
        };
        let (m, _) = train_baseline(BaselineVariant::A, &refs[..3], &refs[3..], &Scalar(vec![1.0]), &fit).unwrap();
        let meta = MetaConfig {
            adaptation_steps: 0,
            ..MetaConfig::default()
        };
        let audit = LabelAudit::new();
        let a = evaluate_baseline(BaselineVariant::A, &m, &refs[3..], &meta, &audit).unwrap();
        let c = evaluate_baseline(BaselineVariant::C, &m, &refs[3..], &meta, &audit).unwrap();
        assert_eq!(a, c);
        assert_eq!(audit.reads(), 4);
    }

    #[test]
    fn b_with_empty_test_equals_a() {
        let ts = tasks();
        let refs: Vec<&Task> = ts.iter().collect();
        let fit = FitConfig::default();
        let (a, _) = train_baseline(BaselineVariant::A, &refs, &[], &Scalar(vec![1.0]), &fit).unwrap();
        let (b, _) = train_baseline(BaselineVariant::B, &refs, &[], &Scalar(vec![1.0]), &fit).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn transfer_with_no_meta_epochs_is_the_pooled_model() {
        let ts = tasks();
        let refs: Vec<&Task> = ts.iter().collect();
        let fit = FitConfig {
            epochs: 5,
            ..FitConfig::default()
        };
        let meta = MetaConfig {
            outer_epochs: 0,
            ..MetaConfig::default()
        };
        let (out, losses) = train_transfer_maml(&refs, &Scalar(vec![1.0]), &fit, &meta).unwrap();
        let support: Vec<&SampleWindow> = refs.iter().flat_map(|t| t.support.iter()).collect();
        let mut pooled = Scalar(vec![1.0]);
        assert_eq!(fit_pooled(&mut pooled, &support, &fit).unwrap(), losses);
        assert_eq!(out.model.0, pooled.0);
    }
}
