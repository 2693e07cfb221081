use rayon::prelude::*;

use super::{categorize, Category, RouteOn, TaskHierarchy};
use crate::error::{Error, Result};
use crate::metalearn::{adapt, evaluate_task, r_squared, Learner, TaskEvaluation};
use crate::tasks::{SampleWindow, Task};

/// `(adaptation samples, scoring samples)` used to route `task`.
pub fn routing_split(task: &Task, route_on: RouteOn) -> Result<(&[SampleWindow], &[SampleWindow])> {
    match route_on {
        RouteOn::Query => Ok((&task.support, &task.query)),
        RouteOn::SupportHoldout => {
            let n = task.support.len();
            if n < 3 {
                return Err(Error::Input(format!(
                    "task {}: support-holdout routing needs at least 3 support samples, got {n}",
                    task.task_id
                )));
            }
            let hold = ((0.2 * n as f64).round() as usize).clamp(2, n - 1);
            Ok(task.support.split_at(n - hold))
        }
    }
}

/// R² after adapting on `fit` and scoring on `score`; −∞ on divergence.
fn routing_score<M: Learner>(
    model: &M,
    fit: &[SampleWindow],
    score: &[SampleWindow],
    alpha: f64,
    steps: usize,
) -> Result<f64> {
    let adapted = match adapt(model, fit, alpha, steps) {
        Ok(a) => a,
        Err(Error::Divergence { .. }) => return Ok(f64::NEG_INFINITY),
        Err(e) => return Err(e),
    };
    let mut local = model.clone();
    local.set_params(&adapted.params)?;
    let windows: Vec<&[f64]> = score.iter().map(|s| s.features.as_slice()).collect();
    let labels: Vec<f64> = score.iter().map(|s| s.label).collect();
    match local.predict(&windows) {
        Ok(p) => Ok(r_squared(&labels, &p).unwrap_or(f64::NEG_INFINITY)),
        Err(Error::Divergence { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

#[derive(Debug)]
pub struct RouteDecision<'h, M> {
    pub model: &'h M,
    pub layer: usize,
    pub leaf: Category,
    /// Routing R² at the deciding layer.
    pub routing_r2: f64,
    /// Routing R² at every visited layer.
    pub path: Vec<f64>,
}

/// Descends the chain until a layer scores the task at or above its γ.
pub fn route<'h, M: Learner>(
    task: &Task,
    hierarchy: &'h TaskHierarchy<M>,
    alpha: f64,
    steps: usize,
) -> Result<RouteDecision<'h, M>> {
    let (fit, score) = routing_split(task, hierarchy.route_on)?;
    let mut path = Vec::new();
    let mut node = &hierarchy.root;
    loop {
        let r2 = routing_score(&node.layer_model, fit, score, alpha, steps)?;
        path.push(r2);
        if categorize(r2, node.gamma) == Category::Easy {
            return Ok(RouteDecision {
                model: &node.easy_model,
                layer: node.layer,
                leaf: Category::Easy,
                routing_r2: r2,
                path,
            });
        }
        match (&node.child, &node.hard_model) {
            (Some(child), _) => node = child,
            (None, Some(hard)) => {
                return Ok(RouteDecision {
                    model: hard,
                    layer: node.layer,
                    leaf: Category::Hard,
                    routing_r2: r2,
                    path,
                })
            }
            (None, None) => {
                return Err(Error::Contract(format!("layer {} has neither child nor hard model", node.layer)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutedEvaluation {
    pub task_id: u64,
    pub layer: usize,
    pub leaf: Category,
    pub routing_r2: f64,
    /// Query R² under the root layer model, before any split.
    pub pre_split_r2: f64,
    /// Query scores of the selected model after adaptation on the support set.
    pub eval: TaskEvaluation,
}

/// Routes and scores every task; results keep the input order.
pub fn evaluate_adaptive<M: Learner>(
    tasks: &[&Task],
    hierarchy: &TaskHierarchy<M>,
    alpha: f64,
    steps: usize,
) -> Result<Vec<RoutedEvaluation>> {
    tasks
        .par_iter()
        .map(|task| {
            let decision = route(task, hierarchy, alpha, steps)?;
            let eval = evaluate_task(decision.model, task, alpha, steps)?;
            let pre_split_r2 = evaluate_task(&hierarchy.root.layer_model, task, alpha, steps)?.r2;
            Ok(RoutedEvaluation {
                task_id: task.task_id,
                layer: decision.layer,
                leaf: decision.leaf,
                routing_r2: decision.routing_r2,
                pre_split_r2,
                eval,
            })
        })
        .collect()
}
