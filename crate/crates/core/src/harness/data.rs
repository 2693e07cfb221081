use std::path::Path;

use super::config::{DataSource, ExperimentConfig};
use crate::error::{Error, Result};
use crate::tasks::{
    export_csv, export_regimes, generate_synthetic, load_csv, load_descriptor, load_regimes, normalize, TaskSet,
};

/// Normalized train, test and pretraining sets sharing train statistics.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: TaskSet,
    pub test: TaskSet,
    pub pretrain: Option<TaskSet>,
    /// Feature indices with zero training variance.
    pub constant_features: Vec<usize>,
}

impl PreparedData {
    /// Hash of the normalized train descriptor; artifacts are tied to it.
    pub fn descriptor_hash(&self) -> String {
        self.train.descriptor.hash()
    }

    pub fn samples_per_task(&self) -> usize {
        self.train.descriptor.k + self.train.descriptor.l
    }
}

fn attach_regimes(set: &mut TaskSet, regimes: &[(u64, usize)]) {
    for task in &mut set.tasks {
        task.regime_id = regimes.iter().find(|r| r.0 == task.task_id).map(|r| r.1);
    }
}

/// Raw (unnormalized) train, test and optional pretraining sets.
pub fn load_raw(cfg: &ExperimentConfig) -> Result<(TaskSet, TaskSet, Option<TaskSet>)> {
    let cfg = cfg.resolved();
    match cfg.data.source {
        DataSource::Synthetic => {
            let data = generate_synthetic(&cfg.data.synthetic)?;
            let pretrain = (!data.pretrain.is_empty()).then_some(data.pretrain);
            Ok((data.train, data.test, pretrain))
        }
        DataSource::Csv => {
            let csv = &cfg.data.csv;
            let missing = |f: &str| Error::config(f, "required when data.source = \"csv\"");
            let descriptor = load_descriptor(csv.descriptor.as_deref().ok_or_else(|| missing("data.csv.descriptor"))?)?;
            let load = |p: &Path| load_csv(p, &descriptor, cfg.seed);
            let mut train = load(csv.train.as_deref().ok_or_else(|| missing("data.csv.train"))?)?;
            let mut test = load(csv.test.as_deref().ok_or_else(|| missing("data.csv.test"))?)?;
            let pretrain = match (&csv.pretrain, &csv.pretrain_descriptor) {
                (Some(p), Some(d)) => Some(load_csv(p, &load_descriptor(d)?, cfg.seed)?),
                (Some(p), None) => Some(load(p)?),
                (None, _) => None,
            };
            if let Some(path) = &csv.regimes {
                let regimes = load_regimes(path)?;
                attach_regimes(&mut train, &regimes);
                attach_regimes(&mut test, &regimes);
            }
            Ok((train, test, pretrain))
        }
    }
}

/// Loads or generates the data and applies train-set normalization.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (train, test, pretrain) = load_raw(cfg)?;
    if train.is_normalized() {
        if test.descriptor != train.descriptor {
            return Err(Error::Input("test set carries different normalization statistics".into()));
        }
        return Ok(PreparedData {
            train,
            test,
            pretrain,
            constant_features: Vec::new(),
        });
    }
    let mut others = vec![&test];
    others.extend(pretrain.as_ref());
    let n = normalize(&train, &others)?;
    let mut rest = n.others.into_iter();
    let test = rest.next().expect("test set normalized");
    Ok(PreparedData {
        train: n.train,
        test,
        pretrain: rest.next(),
        constant_features: n.constant_features,
    })
}

/// Writes `train.csv`, `test.csv`, `descriptor.json`, `pretrain.csv` with
/// `pretrain_descriptor.json` and, for synthetic data, `regimes.csv` into `dir`.
pub fn write_dataset(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (train, test, pretrain) = load_raw(cfg)?;
    let descriptor = dir.join("descriptor.json");
    export_csv(&train, &dir.join("train.csv"), &descriptor)?;
    export_csv(&test, &dir.join("test.csv"), &descriptor)?;
    if let Some(p) = &pretrain {
        export_csv(p, &dir.join("pretrain.csv"), &dir.join("pretrain_descriptor.json"))?;
    }
    let mut regimes: Vec<(u64, usize)> = train
        .tasks
        .iter()
        .chain(&test.tasks)
        .filter_map(|t| t.regime_id.map(|r| (t.task_id, r)))
        .collect();
    if !regimes.is_empty() {
        regimes.sort_unstable();
        export_regimes(&dir.join("regimes.csv"), &regimes)?;
    }
    Ok(())
}
