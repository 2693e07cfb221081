use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, Method};
use super::data::PreparedData;
use crate::autodiff::PredictiveModel;
use crate::baselines::{
    evaluate_baseline, fit_pooled, train_baseline, train_condition_maml, train_transfer_maml, ClusterModel, FitConfig,
};
use crate::error::{Error, Result};
use crate::hierarchy::{evaluate_adaptive, train_adaptive, Category, PartitionRecord, TaskHierarchy, ThresholdEntry};
use crate::metalearn::{evaluate_task, evaluate_tasks, r_squared, train_origin_maml, EpochLog, LabelAudit, TaskEvaluation};
use crate::seed::derive_seed;
use crate::tasks::{SampleWindow, Task};

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: PredictiveModel,
    /// Pooled R² on the held-out pretraining tasks.
    pub heldout_r2: f64,
    pub losses: Vec<f64>,
    pub fit_tasks: Vec<u64>,
    pub heldout_tasks: Vec<u64>,
}

/// Seeded initialization for the configured architecture.
pub fn initial_model(cfg: &ExperimentConfig, data: &PreparedData) -> Result<PredictiveModel> {
    let d = &data.train.descriptor;
    let arch = cfg.architecture(d.n_features, d.seq_len)?;
    PredictiveModel::init(arch, derive_seed(cfg.seed, "init", 0))
}

/// Pooled supervised training on the noise-free pretraining set, scored on
/// a seeded hold-out of its tasks.
pub fn pretrain(cfg: &ExperimentConfig, data: &PreparedData) -> Result<PretrainOutcome> {
    let set = data
        .pretrain
        .as_ref()
        .filter(|s| s.len() >= 2)
        .ok_or_else(|| Error::Input("pretraining needs a pretraining set with at least 2 tasks".into()))?;
    let mut ids = set.ids();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "pretrain-split", 0)));
    let n_hold = ((cfg.pretrain.holdout_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let mut heldout_tasks = ids.split_off(ids.len() - n_hold);
    let mut fit_tasks = ids;
    fit_tasks.sort_unstable();
    heldout_tasks.sort_unstable();

    let samples = |ids: &[u64]| -> Vec<&SampleWindow> {
        set.subset(ids)
            .into_iter()
            .flat_map(|t| t.support.iter().chain(&t.query))
            .collect()
    };
    let mut model = initial_model(cfg, data)?;
    let fit = FitConfig {
        epochs: cfg.pretrain.epochs,
        batch_size: cfg.pretrain.batch_size,
        lr: cfg.pretrain.lr,
        seed: cfg.seed,
    };
    let losses = if fit.epochs == 0 {
        Vec::new()
    } else {
        fit_pooled(&mut model, &samples(&fit_tasks), &fit)?
    };
    let held = samples(&heldout_tasks);
    let windows: Vec<&[f64]> = held.iter().map(|s| s.features.as_slice()).collect();
    let labels: Vec<f64> = held.iter().map(|s| s.label).collect();
    let heldout_r2 = r_squared(&labels, &model.predict(&windows)?)?;
    log::info!("pretraining: held-out R² {heldout_r2:.4}");
    Ok(PretrainOutcome {
        model,
        heldout_r2,
        losses,
        fit_tasks,
        heldout_tasks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Model(PredictiveModel),
    Clusters(ClusterModel),
    Hierarchy(TaskHierarchy),
}

impl Artifact {
    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::Model(_) => "model",
            Artifact::Clusters(_) => "clusters",
            Artifact::Hierarchy(_) => "hierarchy",
        }
    }

    pub fn file_name(&self) -> &'static str {
        match self {
            Artifact::Model(_) => "model.bin",
            Artifact::Clusters(_) => "clusters.bin",
            Artifact::Hierarchy(_) => "hierarchy.bin",
        }
    }

    pub fn expected_kind(method: Method) -> &'static str {
        match method {
            Method::ConditionMaml => "clusters",
            Method::AdaptiveMamlA | Method::AdaptiveMamlB => "hierarchy",
            _ => "model",
        }
    }
}

/// One training-log row; `phase` is `pooled`, `meta`, or `cluster-<k>`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub phase: String,
    pub epoch: usize,
    pub pooled_loss: Option<f64>,
    pub meta: Option<EpochLog>,
}

impl LogRow {
    fn pooled(losses: &[f64]) -> Vec<LogRow> {
        losses
            .iter()
            .enumerate()
            .map(|(i, &l)| LogRow {
                phase: "pooled".into(),
                epoch: i + 1,
                pooled_loss: Some(l),
                meta: None,
            })
            .collect()
    }

    fn meta(phase: &str, log: &[EpochLog]) -> Vec<LogRow> {
        log.iter()
            .map(|e| LogRow {
                phase: phase.into(),
                epoch: e.epoch,
                pooled_loss: None,
                meta: Some(e.clone()),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub method: Method,
    pub artifact: Artifact,
    pub log: Vec<LogRow>,
    pub threshold_log: Vec<ThresholdEntry>,
    pub partitions: Vec<PartitionRecord>,
    /// Epoch whose parameters were kept by single-model MAML methods.
    pub selected_epoch: Option<usize>,
}

/// Runs `cfg.method` from `pretrained` on the train set (baseline B also
/// sees the test support sets).
pub fn train(cfg: &ExperimentConfig, data: &PreparedData, pretrained: &PredictiveModel) -> Result<TrainOutcome> {
    let train: Vec<&Task> = data.train.tasks.iter().collect();
    let test: Vec<&Task> = data.test.tasks.iter().collect();
    let meta = cfg.meta_config();
    let fit = FitConfig::matching(&meta, data.samples_per_task());
    let method = cfg.method;
    let mut out = TrainOutcome {
        method,
        artifact: Artifact::Model(pretrained.clone()),
        log: Vec::new(),
        threshold_log: Vec::new(),
        partitions: Vec::new(),
        selected_epoch: None,
    };
    match method {
        Method::BaselineA | Method::BaselineB | Method::BaselineC => {
            let variant = method.baseline().expect("baseline method");
            let (model, losses) = train_baseline(variant, &train, &test, pretrained, &fit)?;
            out.artifact = Artifact::Model(model);
            out.log = LogRow::pooled(&losses);
        }
        Method::OriginMaml => {
            let o = train_origin_maml(&train, pretrained, &meta)?;
            out.log = LogRow::meta("meta", &o.log);
            out.selected_epoch = Some(o.selected_epoch);
            out.artifact = Artifact::Model(o.model);
        }
        Method::TransferMaml => {
            let (o, losses) = train_transfer_maml(&train, pretrained, &fit, &meta)?;
            out.log = LogRow::pooled(&losses);
            out.log.extend(LogRow::meta("meta", &o.log));
            out.selected_epoch = Some(o.selected_epoch);
            out.artifact = Artifact::Model(o.model);
        }
        Method::ConditionMaml => {
            let f = data.train.descriptor.n_features;
            let (clusters, logs) = train_condition_maml(&train, pretrained, &meta, cfg.condition.clusters, f)?;
            for (k, l) in logs.iter().enumerate() {
                out.log.extend(LogRow::meta(&format!("cluster-{k}"), l));
            }
            out.artifact = Artifact::Clusters(clusters);
        }
        Method::AdaptiveMamlA | Method::AdaptiveMamlB => {
            let h = cfg.hierarchy_config(method.variant().expect("adaptive method"));
            let o = train_adaptive(&train, pretrained, &h)?;
            out.log = LogRow::meta("meta", &o.log);
            out.threshold_log = o.hierarchy.threshold_log.clone();
            out.partitions = o.partitions;
            out.artifact = Artifact::Hierarchy(o.hierarchy);
        }
    }
    Ok(out)
}

/// Routing details for tasks scored through a hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteInfo {
    pub layer: usize,
    pub leaf: Category,
    pub routing_r2: f64,
    pub pre_split_r2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub eval: TaskEvaluation,
    /// Cluster index for Condition-MAML.
    pub cluster: Option<usize>,
    pub route: Option<RouteInfo>,
}

/// Scores `tasks` (input order kept) under `method`'s test protocol.
pub fn evaluate(method: Method, artifact: &Artifact, tasks: &[&Task], cfg: &ExperimentConfig) -> Result<Vec<TaskResult>> {
    let meta = cfg.meta_config();
    let (alpha, steps) = (meta.inner_lr, meta.adaptation_steps);
    let plain = |evals: Vec<TaskEvaluation>| {
        evals
            .into_iter()
            .map(|eval| TaskResult {
                eval,
                cluster: None,
                route: None,
            })
            .collect()
    };
    let mismatch = || {
        Error::Argument(format!(
            "{method} expects a {} artifact, got {}",
            Artifact::expected_kind(method),
            artifact.kind()
        ))
    };
    match (method, artifact) {
        (Method::BaselineA | Method::BaselineB | Method::BaselineC, Artifact::Model(m)) => {
            let variant = method.baseline().expect("baseline method");
            Ok(plain(evaluate_baseline(variant, m, tasks, &meta, &LabelAudit::new())?))
        }
        (Method::OriginMaml | Method::TransferMaml, Artifact::Model(m)) => Ok(plain(evaluate_tasks(m, tasks, alpha, steps)?)),
        (Method::ConditionMaml, Artifact::Clusters(c)) => tasks
            .iter()
            .map(|t| {
                let k = c.assign(t);
                Ok(TaskResult {
                    eval: evaluate_task(&c.models[k], t, alpha, steps)?,
                    cluster: Some(k),
                    route: None,
                })
            })
            .collect(),
        (Method::AdaptiveMamlA | Method::AdaptiveMamlB, Artifact::Hierarchy(h)) => Ok(evaluate_adaptive(tasks, h, alpha, steps)?
            .into_iter()
            .map(|r| TaskResult {
                eval: r.eval,
                cluster: None,
                route: Some(RouteInfo {
                    layer: r.layer,
                    leaf: r.leaf,
                    routing_r2: r.routing_r2,
                    pre_split_r2: r.pre_split_r2,
                }),
            })
            .collect()),
        _ => Err(mismatch()),
    }
}
