use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{select_threshold, HierarchyConfig, SplitNode, TaskHierarchy, ThresholdEntry, Variant};
use crate::autodiff::OptimizerState;
use crate::error::{Error, Result};
use crate::metalearn::{evaluate_tasks, meta_epoch, EpochLog, Learner, MetaConfig, TaskEvaluation};
use crate::seed::derive_seed;
use crate::tasks::Task;

/// Per-task scores and the resulting partition for one `(epoch, layer)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionRecord {
    pub epoch: usize,
    pub layer: usize,
    pub gamma: f64,
    /// `(task_id, r2)` for every task entering the layer, ascending id.
    pub scores: Vec<(u64, f64)>,
    pub easy_ids: Vec<u64>,
    pub hard_ids: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct AdaptiveOutcome<M> {
    pub hierarchy: TaskHierarchy<M>,
    pub partitions: Vec<PartitionRecord>,
    pub log: Vec<EpochLog>,
}

/// `inner_epochs` sweeps of MAML on `tasks` with a fresh Adam state.
fn meta_train<M: Learner>(model: &mut M, tasks: &[&Task], cfg: &MetaConfig, rng: &mut ChaCha8Rng) -> Result<usize> {
    if tasks.is_empty() {
        return Ok(0);
    }
    let mut optimizer = OptimizerState::adam(model.params().len());
    let mut skipped = 0;
    for _ in 0..cfg.inner_epochs {
        skipped += meta_epoch(model, tasks, cfg, &mut optimizer, rng)?.tasks_skipped;
    }
    Ok(skipped)
}

fn pick<'a>(tasks: &[&'a Task], ids: &[u64]) -> Vec<&'a Task> {
    tasks.iter().filter(|t| ids.binary_search(&t.task_id).is_ok()).copied().collect()
}

/// Builds the chain from layer-ordered nodes.
fn link<M>(mut nodes: Vec<SplitNode<M>>) -> SplitNode<M> {
    let mut node = nodes.pop().expect("at least one layer");
    while let Some(mut parent) = nodes.pop() {
        parent.child = Some(Box::new(node));
        node = parent;
    }
    node
}

/// Trains the easy-to-hard hierarchy. Every outer epoch re-scores and
/// re-splits the full train set; the returned hierarchy holds the final
/// epoch's models and thresholds.
pub fn train_adaptive<M: Learner>(train: &[&Task], pretrained: &M, cfg: &HierarchyConfig) -> Result<AdaptiveOutcome<M>> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::Input(format!("hierarchy training needs at least 2 tasks, got {}", train.len())));
    }
    if cfg.meta.outer_epochs == 0 {
        return Err(Error::config("meta.outer_epochs", "hierarchy training needs at least one outer epoch"));
    }
    let meta = &cfg.meta;
    let mut all: Vec<&Task> = train.to_vec();
    all.sort_by_key(|t| t.task_id);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(meta.seed, "batches", 0));
    let mut threshold_log = Vec::new();
    let mut partitions = Vec::new();
    let mut log = Vec::new();
    let mut previous_hard: Option<M> = None;
    let mut root = None;

    for epoch in 1..=meta.outer_epochs {
        let started = Instant::now();
        let mut model = match (cfg.variant, &previous_hard) {
            (Variant::B, Some(h)) => h.clone(),
            _ => pretrained.clone(),
        };
        let mut tasks = all.clone();
        let mut nodes: Vec<SplitNode<M>> = Vec::new();
        let mut skipped = 0;
        for layer in 1..=cfg.max_splits {
            skipped += meta_train(&mut model, &tasks, meta, &mut rng)?;
            let evals = evaluate_tasks(&model, &tasks, meta.inner_lr, meta.adaptation_steps)?;
            let r2: Vec<f64> = evals.iter().map(|e| e.r2).collect();
            let split = select_threshold(&r2, cfg.bounds)?;
            let ids = |idx: &[usize]| {
                let mut v: Vec<u64> = idx.iter().map(|&i| tasks[i].task_id).collect();
                v.sort_unstable();
                v
            };
            let (easy_ids, hard_ids) = (ids(&split.easy), ids(&split.hard));
            log::debug!(
                "epoch {epoch} layer {layer}: γ = {:.4}, {} easy / {} hard",
                split.gamma,
                easy_ids.len(),
                hard_ids.len()
            );
            threshold_log.push(ThresholdEntry {
                epoch,
                layer,
                gamma: split.gamma,
                n_tasks: tasks.len(),
                n_hard: hard_ids.len(),
            });
            partitions.push(PartitionRecord {
                epoch,
                layer,
                gamma: split.gamma,
                scores: tasks.iter().map(|t| t.task_id).zip(r2.iter().copied()).collect(),
                easy_ids: easy_ids.clone(),
                hard_ids: hard_ids.clone(),
            });

            let layer_model = model.clone();
            let mut easy_model = model.clone();
            skipped += meta_train(&mut easy_model, &pick(&tasks, &easy_ids), meta, &mut rng)?;
            tasks = pick(&tasks, &hard_ids);

            let deepest = layer == cfg.max_splits || hard_ids.len() < 2;
            let hard_model = if deepest {
                if layer < cfg.max_splits {
                    log::info!("epoch {epoch}: chain truncated at layer {layer} ({} hard tasks)", hard_ids.len());
                }
                skipped += meta_train(&mut model, &tasks, meta, &mut rng)?;
                Some(model.clone())
            } else {
                None
            };
            nodes.push(SplitNode {
                layer,
                gamma: split.gamma,
                layer_model,
                easy_model,
                easy_ids,
                hard_ids,
                child: None,
                hard_model,
            });
            if deepest {
                break;
            }
        }
        let chain = link(nodes);
        previous_hard = chain.chain().last().and_then(|n| n.hard_model.clone());

        let evals = member_evaluations(&chain, &all, meta)?;
        let ok: Vec<&TaskEvaluation> = evals.iter().filter(|e| !e.diverged).collect();
        let n = ok.len().max(1) as f64;
        log.push(EpochLog {
            epoch,
            mean_query_mse: ok.iter().map(|e| e.mse).sum::<f64>() / n,
            mean_query_r2: ok.iter().map(|e| e.r2).sum::<f64>() / n,
            tasks_skipped: skipped,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        root = Some(chain);
    }

    Ok(AdaptiveOutcome {
        hierarchy: TaskHierarchy {
            initial_model: pretrained.clone(),
            root: root.expect("at least one epoch ran"),
            threshold_log,
            route_on: cfg.route_on,
        },
        partitions,
        log,
    })
}

/// Scores each train task with the model of the leaf it was assigned to
/// during training.
fn member_evaluations<M: Learner>(root: &SplitNode<M>, all: &[&Task], meta: &MetaConfig) -> Result<Vec<TaskEvaluation>> {
    let mut out = Vec::with_capacity(all.len());
    for node in root.chain() {
        out.extend(evaluate_tasks(
            &node.easy_model,
            &pick(all, &node.easy_ids),
            meta.inner_lr,
            meta.adaptation_steps,
        )?);
        if let Some(h) = &node.hard_model {
            out.extend(evaluate_tasks(h, &pick(all, &node.hard_ids), meta.inner_lr, meta.adaptation_steps)?);
        }
    }
    Ok(out)
}
