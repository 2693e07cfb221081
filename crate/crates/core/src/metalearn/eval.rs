use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use super::{adapt, Learner};
use crate::autodiff::mse_loss;
use crate::error::{Error, Result};
use crate::tasks::{SampleWindow, Task};

/// Coefficient of determination `1 − SS_res / SS_tot`.
///
/// Constant labels give 1.0 for an exact fit and −∞ otherwise.
pub fn r_squared(labels: &[f64], predictions: &[f64]) -> Result<f64> {
    if labels.len() != predictions.len() {
        return Err(Error::Argument(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    if labels.len() < 2 {
        return Err(Error::Argument("R² needs at least two samples".into()));
    }
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    let ss_tot: f64 = labels.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = labels.iter().zip(predictions).map(|(y, p)| (y - p) * (y - p)).sum();
    if ss_tot == 0.0 {
        return Ok(if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY });
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Counts every query-label read made during evaluation.
#[derive(Debug, Default)]
pub struct LabelAudit {
    reads: AtomicUsize,
}

impl LabelAudit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }

    fn read(&self, samples: &[SampleWindow]) -> Vec<f64> {
        self.reads.fetch_add(samples.len(), Ordering::SeqCst);
        samples.iter().map(|s| s.label).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskEvaluation {
    pub task_id: u64,
    /// −∞ when adaptation diverged.
    pub r2: f64,
    pub mse: f64,
    /// Query predictions after adaptation, empty on divergence.
    pub predictions: Vec<f64>,
    pub diverged: bool,
}

impl TaskEvaluation {
    fn sentinel(task_id: u64) -> Self {
        Self {
            task_id,
            r2: f64::NEG_INFINITY,
            mse: f64::INFINITY,
            predictions: Vec::new(),
            diverged: true,
        }
    }
}

pub fn evaluate_task_audited<M: Learner>(
    model: &M,
    task: &Task,
    alpha: f64,
    steps: usize,
    audit: &LabelAudit,
) -> Result<TaskEvaluation> {
    if task.query.is_empty() {
        return Err(Error::Input(format!("task {} has an empty query set", task.task_id)));
    }
    let adapted = match adapt(model, &task.support, alpha, steps) {
        Ok(a) => a,
        Err(Error::Divergence { .. }) => return Ok(TaskEvaluation::sentinel(task.task_id)),
        Err(e) => return Err(e),
    };
    let mut local = model.clone();
    local.set_params(&adapted.params)?;
    let windows: Vec<&[f64]> = task.query.iter().map(|s| s.features.as_slice()).collect();
    let predictions = match local.predict(&windows) {
        Ok(p) => p,
        Err(Error::Divergence { .. }) => return Ok(TaskEvaluation::sentinel(task.task_id)),
        Err(e) => return Err(e),
    };
    let labels = audit.read(&task.query);
    Ok(TaskEvaluation {
        task_id: task.task_id,
        r2: r_squared(&labels, &predictions).unwrap_or(f64::NEG_INFINITY),
        mse: mse_loss(&predictions, &labels)?,
        predictions,
        diverged: false,
    })
}

/// Adapts a copy of `model` on the support set and scores it on the query set.
pub fn evaluate_task<M: Learner>(model: &M, task: &Task, alpha: f64, steps: usize) -> Result<TaskEvaluation> {
    evaluate_task_audited(model, task, alpha, steps, &LabelAudit::new())
}

/// Evaluates tasks in parallel; results keep the input order.
pub fn evaluate_tasks<M: Learner>(model: &M, tasks: &[&Task], alpha: f64, steps: usize) -> Result<Vec<TaskEvaluation>> {
    tasks.par_iter().map(|t| evaluate_task(model, t, alpha, steps)).collect()
}

/// Query MSE without adaptation.
pub fn query_mse<M: Learner>(model: &M, task: &Task) -> Result<f64> {
    let windows: Vec<&[f64]> = task.query.iter().map(|s| s.features.as_slice()).collect();
    let labels: Vec<f64> = task.query.iter().map(|s| s.label).collect();
    mse_loss(&model.predict(&windows)?, &labels)
}

/// Mean MSE and mean R² over the tasks that did not diverge.
pub(crate) fn mean_scores(evals: &[TaskEvaluation]) -> (f64, f64) {
    let ok: Vec<&TaskEvaluation> = evals.iter().filter(|e| !e.diverged && e.r2.is_finite()).collect();
    if ok.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = ok.len() as f64;
    (
        ok.iter().map(|e| e.mse).sum::<f64>() / n,
        ok.iter().map(|e| e.r2).sum::<f64>() / n,
    )
}
