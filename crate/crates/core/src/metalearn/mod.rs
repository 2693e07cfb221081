//! First-order MAML: per-task adaptation, meta-updates, and task scoring.

mod eval;
mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{mse_loss, OptimizerState, PredictiveModel};
use crate::error::{Error, Result};
use crate::tasks::{SampleWindow, Task};

pub use eval::{evaluate_task, evaluate_task_audited, evaluate_tasks, query_mse, r_squared, LabelAudit, TaskEvaluation};
pub use train::{meta_epoch, train_origin_maml, EpochLog, EpochStats, MetaOutcome};

/// Anything with a flat parameter vector, a batch predictor, and an MSE gradient.
pub trait Learner: Clone + Send + Sync {
    fn params(&self) -> &[f64];
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
    fn predict(&self, windows: &[&[f64]]) -> Result<Vec<f64>>;
    fn loss_and_gradient(&self, windows: &[&[f64]], labels: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl Learner for PredictiveModel {
    fn params(&self) -> &[f64] {
        PredictiveModel::params(self)
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        PredictiveModel::set_params(self, params)
    }

    fn predict(&self, windows: &[&[f64]]) -> Result<Vec<f64>> {
        PredictiveModel::predict(self, windows)
    }

    fn loss_and_gradient(&self, windows: &[&[f64]], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
        PredictiveModel::loss_and_gradient(self, windows, labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    /// Inner (adaptation) learning rate α.
    pub inner_lr: f64,
    /// Outer (Adam) learning rate β.
    pub outer_lr: f64,
    pub adaptation_steps: usize,
    pub task_batch_size: usize,
    pub outer_epochs: usize,
    /// Full sweeps over the task set per outer epoch.
    pub inner_epochs: usize,
    pub seed: u64,
    /// Keep the epoch with the best mean train-query R² instead of the last.
    pub select_best_epoch: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_lr: 0.01,
            outer_lr: 0.001,
            adaptation_steps: 1,
            task_batch_size: 32,
            outer_epochs: 30,
            inner_epochs: 1,
            seed: 0,
            select_best_epoch: true,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr >= 0.0) || !self.inner_lr.is_finite() {
            return Err(Error::config("meta.inner_lr", "must be a finite value ≥ 0"));
        }
        if !(self.outer_lr >= 0.0) || !self.outer_lr.is_finite() {
            return Err(Error::config("meta.outer_lr", "must be a finite value ≥ 0"));
        }
        if self.task_batch_size == 0 {
            return Err(Error::config("meta.task_batch_size", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptResult {
    pub params: Vec<f64>,
    pub loss_before: f64,
    pub loss_after: f64,
    pub steps: usize,
}

fn split(samples: &[SampleWindow]) -> (Vec<&[f64]>, Vec<f64>) {
    (
        samples.iter().map(|s| s.features.as_slice()).collect(),
        samples.iter().map(|s| s.label).collect(),
    )
}

fn diverged(step: usize, detail: impl Into<String>) -> Error {
    Error::Divergence {
        step,
        detail: detail.into(),
    }
}

/// `steps` full-batch gradient-descent updates `θ ← θ − α∇L` on the support
/// MSE. The input model is left untouched.
pub fn adapt<M: Learner>(model: &M, support: &[SampleWindow], alpha: f64, steps: usize) -> Result<AdaptResult> {
    if support.is_empty() {
        return Err(Error::Input("cannot adapt on an empty support set".into()));
    }
    let (windows, labels) = split(support);
    let mut work = model.clone();
    let mut params = model.params().to_vec();
    let mut loss_before = f64::NAN;
    for step in 0..steps {
        let (loss, grad) = work.loss_and_gradient(&windows, &labels).map_err(|e| match e {
            Error::Divergence { detail, .. } => diverged(step, detail),
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(diverged(step, format!("support loss is {loss}")));
        }
        if step == 0 {
            loss_before = loss;
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= alpha * g;
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(diverged(step, "non-finite parameter after update"));
        }
        work.set_params(&params)?;
    }
    let loss_after = work
        .predict(&windows)
        .and_then(|p| mse_loss(&p, &labels))
        .map_err(|e| match e {
            Error::Divergence { detail, .. } => diverged(steps, detail),
            other => other,
        })?;
    if !loss_after.is_finite() {
        return Err(diverged(steps, format!("support loss is {loss_after}")));
    }
    if steps == 0 {
        loss_before = loss_after;
    }
    Ok(AdaptResult {
        params,
        loss_before,
        loss_after,
        steps,
    })
}

/// Adapts on the support set and returns the query loss and its gradient at
/// the adapted parameters (the first-order outer gradient).
pub fn outer_gradient<M: Learner>(model: &M, task: &Task, cfg: &MetaConfig) -> Result<(f64, Vec<f64>)> {
    let adapted = adapt(model, &task.support, cfg.inner_lr, cfg.adaptation_steps)?;
    let mut local = model.clone();
    local.set_params(&adapted.params)?;
    let (windows, labels) = split(&task.query);
    let (loss, grad) = local.loss_and_gradient(&windows, &labels)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(diverged(cfg.adaptation_steps, "non-finite query loss or gradient"));
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Mean over used tasks of the per-task mean query MSE.
    pub meta_loss: f64,
    pub tasks_used: usize,
    pub tasks_skipped: usize,
}

/// One first-order meta-update on a task batch. Per-task work runs in
/// parallel; gradients are reduced in ascending task-id order.
pub fn meta_step<M: Learner>(
    model: &mut M,
    batch: &[&Task],
    cfg: &MetaConfig,
    optimizer: &mut OptimizerState,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::Input("meta_step needs a non-empty task batch".into()));
    }
    let mut ordered: Vec<&Task> = batch.to_vec();
    ordered.sort_by_key(|t| t.task_id);
    let shared: &M = model;
    let results: Vec<Result<(f64, Vec<f64>)>> =
        ordered.par_iter().map(|task| outer_gradient(shared, task, cfg)).collect();

    let mut sum = vec![0.0; model.params().len()];
    let mut loss = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (task, result) in ordered.iter().zip(results) {
        match result {
            Ok((l, g)) => {
                for (s, v) in sum.iter_mut().zip(&g) {
                    *s += v;
                }
                loss += l;
                used += 1;
            }
            Err(Error::Divergence { step, detail }) => {
                log::debug!("task {} skipped: divergence at step {step}: {detail}", task.task_id);
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(diverged(0, format!("all {skipped} tasks in the batch diverged")));
    }
    let n = used as f64;
    for s in &mut sum {
        *s /= n;
    }
    let mut params = model.params().to_vec();
    optimizer.step(&mut params, &sum, cfg.outer_lr)?;
    model.set_params(&params)?;
    Ok(StepReport {
        meta_loss: loss / n,
        tasks_used: used,
        tasks_skipped: skipped,
    })
}

#[cfg(test)]
pub(crate) mod scalar {
    use super::*;

    /// `ŷ = θ·x` on length-1 windows.
    #[derive(Clone, Debug)]
    pub struct Scalar(pub Vec<f64>);

    impl Learner for Scalar {
        fn params(&self) -> &[f64] {
            &self.0
        }

        fn set_params(&mut self, params: &[f64]) -> Result<()> {
            self.0 = params.to_vec();
            Ok(())
        }

        fn predict(&self, windows: &[&[f64]]) -> Result<Vec<f64>> {
            Ok(windows.iter().map(|w| self.0[0] * w[0]).collect())
        }

        fn loss_and_gradient(&self, windows: &[&[f64]], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
            let n = windows.len() as f64;
            let mut loss = 0.0;
            let mut g = 0.0;
            for (w, y) in windows.iter().zip(labels) {
                let r = self.0[0] * w[0] - y;
                loss += r * r / n;
                g += 2.0 * r * w[0] / n;
            }
            Ok((loss, vec![g]))
        }
    }

    pub fn sample(id: u64, x: f64, y: f64, year: i32) -> SampleWindow {
        SampleWindow {
            features: vec![x],
            label: y,
            year,
            sample_id: id,
        }
    }

    pub fn task(id: u64, support: &[(f64, f64)], query: &[(f64, f64)]) -> Task {
        let n = support.len() as u64;
        Task {
            task_id: id,
            location: crate::tasks::Location { lat: 0.0, lon: 0.0 },
            support: support
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| sample(i as u64, x, y, 2000))
                .collect(),
            query: query
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| sample(n + i as u64, x, y, 2010))
                .collect(),
            regime_id: None,
        }
    }
}
