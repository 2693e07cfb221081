use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate_tasks, mean_scores};
use super::{meta_step, Learner, MetaConfig};
use crate::autodiff::OptimizerState;
use crate::error::Result;
use crate::seed::derive_seed;
use crate::tasks::Task;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub mean_meta_loss: f64,
    pub tasks_skipped: usize,
    pub steps: usize,
}

/// One sweep over `tasks` in shuffled batches of `task_batch_size`
/// (clamped to the task count).
pub fn meta_epoch<M: Learner>(
    model: &mut M,
    tasks: &[&Task],
    cfg: &MetaConfig,
    optimizer: &mut OptimizerState,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    let mut order: Vec<&Task> = tasks.to_vec();
    order.sort_by_key(|t| t.task_id);
    order.shuffle(rng);
    let batch = cfg.task_batch_size.min(order.len()).max(1);
    let mut loss = 0.0;
    let mut skipped = 0;
    let mut steps = 0;
    for chunk in order.chunks(batch) {
        let report = meta_step(model, chunk, cfg, optimizer)?;
        loss += report.meta_loss;
        skipped += report.tasks_skipped;
        steps += 1;
    }
    Ok(EpochStats {
        mean_meta_loss: if steps > 0 { loss / steps as f64 } else { f64::NAN },
        tasks_skipped: skipped,
        steps,
    })
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_query_mse: f64,
    pub mean_query_r2: f64,
    pub tasks_skipped: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct MetaOutcome<M> {
    pub model: M,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept; 0 when no epoch ran.
    pub selected_epoch: usize,
}

/// Plain MAML over all training tasks, logging post-adaptation train-query
/// scores after every outer epoch.
pub fn train_origin_maml<M: Learner>(tasks: &[&Task], init: &M, cfg: &MetaConfig) -> Result<MetaOutcome<M>> {
    cfg.validate()?;
    let mut model = init.clone();
    let mut optimizer = OptimizerState::adam(model.params().len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "batches", 0));
    let mut log = Vec::with_capacity(cfg.outer_epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    for epoch in 1..=cfg.outer_epochs {
        let started = Instant::now();
        let mut skipped = 0;
        for _ in 0..cfg.inner_epochs {
            skipped += meta_epoch(&mut model, tasks, cfg, &mut optimizer, &mut rng)?.tasks_skipped;
        }
        let evals = evaluate_tasks(&model, tasks, cfg.inner_lr, cfg.adaptation_steps)?;
        let (mse, r2) = mean_scores(&evals);
        log::info!("epoch {epoch}: train query mse {mse:.6}, r2 {r2:.4}");
        log.push(EpochLog {
            epoch,
            mean_query_mse: mse,
            mean_query_r2: r2,
            tasks_skipped: skipped,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        if cfg.select_best_epoch && best.as_ref().is_none_or(|b| r2 > b.0) {
            best = Some((r2, epoch, model.params().to_vec()));
        }
    }
    let selected_epoch = match best {
        Some((_, epoch, params)) => {
            model.set_params(&params)?;
            epoch
        }
        None => cfg.outer_epochs,
    };
    Ok(MetaOutcome {
        model,
        log,
        selected_epoch,
    })
}
