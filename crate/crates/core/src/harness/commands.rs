use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{hex, ExperimentConfig, Method};
use super::data::{prepare, write_dataset, PreparedData};
use super::report::{
    build_report, num, write_partitions, write_report, write_rows, write_threshold_log, write_training_log,
    MetricsReport,
};
use super::run::{evaluate, pretrain, train, Artifact, PretrainOutcome, TrainOutcome};
use crate::autodiff::{load_model, save_model, PredictiveModel};
use crate::baselines::{load_clusters, save_clusters};
use crate::error::{Error, Result};
use crate::hierarchy::{load_hierarchy, save_hierarchy};
use crate::tasks::Task;

/// Sidecar written next to every model artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub kind: String,
    /// Absent for pretrained models.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    pub seed: u64,
    pub config_hash: String,
    pub descriptor_hash: String,
    pub artifact_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_r2: Option<f64>,
    pub wall_ms: u64,
}

pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.toml");
    artifact.with_file_name(name)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_meta(artifact: &Path, meta: &ArtifactMeta) -> Result<()> {
    write_text(&sidecar_path(artifact), &toml::to_string(meta).expect("metadata serializes"))
}

pub fn read_meta(artifact: &Path) -> Result<ArtifactMeta> {
    let path = sidecar_path(artifact);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text).map_err(|e| Error::format(&path, e.message()))
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn elapsed_ms(started: Instant) -> u64 {
    started.elapsed().as_millis() as u64
}

/// `gen-data`: writes the dataset files into `<out>/data`.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let dir = cfg.out.join("data");
    write_dataset(cfg, &dir)?;
    Ok(dir)
}

/// `pretrain`: fits and saves the pretrained model with its held-out R².
pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let data = prepare(cfg)?;
    let outcome = pretrain(cfg, &data)?;
    create_dir(&cfg.out)?;
    let path = cfg.pretrained_path();
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    save_model(&outcome.model, &path)?;
    write_rows(
        &cfg.out.join("pretrain_log.csv"),
        &["epoch", "loss"],
        outcome
            .losses
            .iter()
            .enumerate()
            .map(|(i, &l)| vec![(i + 1).to_string(), num(l)]),
    )?;
    write_meta(
        &path,
        &ArtifactMeta {
            kind: "pretrained".into(),
            method: None,
            seed: cfg.seed,
            config_hash: cfg.hash(),
            descriptor_hash: data.descriptor_hash(),
            artifact_sha256: file_sha256(&path)?,
            selected_epoch: None,
            heldout_r2: Some(outcome.heldout_r2),
            wall_ms: elapsed_ms(started),
        },
    )?;
    Ok(outcome)
}

/// Loads the pretrained model and checks it was fitted on this dataset.
pub fn load_pretrained(cfg: &ExperimentConfig, data: &PreparedData) -> Result<PredictiveModel> {
    let path = cfg.pretrained_path();
    if !path.exists() {
        return Err(Error::Input(format!(
            "pretrained model {} not found; run `hiermaml pretrain` with the same config first",
            path.display()
        )));
    }
    check_descriptor(&path, data)?;
    let model = load_model(&path)?;
    let d = &data.train.descriptor;
    if model.architecture() != &cfg.architecture(d.n_features, d.seq_len)? {
        return Err(Error::format(&path, "architecture differs from the configured model"));
    }
    Ok(model)
}

fn check_descriptor(artifact: &Path, data: &PreparedData) -> Result<ArtifactMeta> {
    let meta = read_meta(artifact)?;
    if meta.descriptor_hash != data.descriptor_hash() {
        return Err(Error::format(
            artifact,
            format!(
                "descriptor hash {} does not match the evaluation data ({})",
                meta.descriptor_hash,
                data.descriptor_hash()
            ),
        ));
    }
    Ok(meta)
}

/// Saves `outcome`'s artifact and logs into `dir`; returns the artifact path.
pub fn save_training(dir: &Path, cfg: &ExperimentConfig, data: &PreparedData, outcome: &TrainOutcome, wall_ms: u64) -> Result<PathBuf> {
    create_dir(dir)?;
    let path = dir.join(outcome.artifact.file_name());
    match &outcome.artifact {
        Artifact::Model(m) => save_model(m, &path)?,
        Artifact::Clusters(c) => save_clusters(c, &path)?,
        Artifact::Hierarchy(h) => save_hierarchy(h, &path)?,
    }
    write_training_log(&dir.join("training_log.csv"), &outcome.log)?;
    if matches!(outcome.artifact, Artifact::Hierarchy(_)) {
        write_threshold_log(&dir.join("threshold_log.csv"), &outcome.threshold_log)?;
        write_partitions(&dir.join("partitions.csv"), &outcome.partitions)?;
    }
    write_meta(
        &path,
        &ArtifactMeta {
            kind: outcome.artifact.kind().into(),
            method: Some(outcome.method),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            descriptor_hash: data.descriptor_hash(),
            artifact_sha256: file_sha256(&path)?,
            selected_epoch: outcome.selected_epoch,
            heldout_r2: None,
            wall_ms,
        },
    )?;
    Ok(path)
}

/// `train`: runs the configured method and persists its artifact.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<(TrainOutcome, PathBuf)> {
    cfg.validate()?;
    let started = Instant::now();
    let data = prepare(cfg)?;
    let pretrained = load_pretrained(cfg, &data)?;
    let outcome = train(cfg, &data, &pretrained)?;
    let path = save_training(&cfg.out, cfg, &data, &outcome, elapsed_ms(started))?;
    Ok((outcome, path))
}

/// Which task set `eval` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalSplit {
    #[default]
    Test,
    Train,
}

pub fn load_artifact(path: &Path, kind: &str) -> Result<Artifact> {
    Ok(match kind {
        "model" => Artifact::Model(load_model(path)?),
        "clusters" => Artifact::Clusters(load_clusters(path)?),
        "hierarchy" => Artifact::Hierarchy(load_hierarchy(path)?),
        other => return Err(Error::format(path, format!("unknown artifact kind `{other}`"))),
    })
}

/// Report-level metadata written as `report.toml`.
#[derive(Debug, Clone, Serialize)]
struct ReportMeta<'a> {
    method: Method,
    seed: u64,
    split: &'a str,
    config_hash: String,
    descriptor_hash: String,
    artifact: String,
    artifact_sha256: String,
    wall_ms: u64,
}

fn write_report_meta(dir: &Path, meta: &ReportMeta) -> Result<()> {
    write_text(&dir.join("report.toml"), &toml::to_string(meta).expect("metadata serializes"))
}

/// Evaluates an in-memory artifact and writes the report into `dir`.
fn evaluate_into(
    dir: &Path,
    cfg: &ExperimentConfig,
    data: &PreparedData,
    artifact: &Artifact,
    method: Method,
    split: EvalSplit,
) -> Result<MetricsReport> {
    let set = match split {
        EvalSplit::Test => &data.test,
        EvalSplit::Train => &data.train,
    };
    let tasks: Vec<&Task> = set.tasks.iter().collect();
    let results = evaluate(method, artifact, &tasks, cfg)?;
    let report = build_report(method, &tasks, &results)?;
    create_dir(dir)?;
    write_report(dir, &report)?;
    Ok(report)
}

/// `eval`: scores a saved artifact (default `<out>/<method artifact>`).
pub fn cmd_eval(cfg: &ExperimentConfig, artifact: Option<&Path>, split: EvalSplit) -> Result<MetricsReport> {
    cfg.validate()?;
    let started = Instant::now();
    let data = prepare(cfg)?;
    let kind = Artifact::expected_kind(cfg.method);
    let path = artifact.map_or_else(|| cfg.out.join(format!("{kind}.bin")), Path::to_path_buf);
    let meta = check_descriptor(&path, &data)?;
    if meta.kind != kind {
        return Err(Error::Argument(format!(
            "{} holds a {} artifact but method {} needs a {kind}",
            path.display(),
            meta.kind,
            cfg.method
        )));
    }
    let loaded = load_artifact(&path, &meta.kind)?;
    let report = evaluate_into(&cfg.out, cfg, &data, &loaded, cfg.method, split)?;
    write_report_meta(
        &cfg.out,
        &ReportMeta {
            method: cfg.method,
            seed: cfg.seed,
            split: match split {
                EvalSplit::Test => "test",
                EvalSplit::Train => "train",
            },
            config_hash: cfg.hash(),
            descriptor_hash: data.descriptor_hash(),
            artifact: path.display().to_string(),
            artifact_sha256: file_sha256(&path)?,
            wall_ms: elapsed_ms(started),
        },
    )?;
    Ok(report)
}

/// Trains and evaluates in memory.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    pretrained: &PredictiveModel,
) -> Result<(TrainOutcome, MetricsReport)> {
    let outcome = train(cfg, data, pretrained)?;
    let tasks: Vec<&Task> = data.test.tasks.iter().collect();
    let results = evaluate(cfg.method, &outcome.artifact, &tasks, cfg)?;
    let report = build_report(cfg.method, &tasks, &results)?;
    Ok((outcome, report))
}

/// `report`: trains and evaluates every method in `methods` into
/// `<out>/<method>/` and writes the comparison `<out>/table.csv`. Pretrains
/// first when no pretrained model exists.
pub fn cmd_report(cfg: &ExperimentConfig, methods: &[Method]) -> Result<Vec<MetricsReport>> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    let pretrained = if cfg.pretrained_path().exists() {
        load_pretrained(cfg, &data)?
    } else {
        log::info!("no pretrained model at {}; pretraining", cfg.pretrained_path().display());
        cmd_pretrain(cfg)?.model
    };
    let mut reports = Vec::with_capacity(methods.len());
    for &method in methods {
        let started = Instant::now();
        let run = ExperimentConfig {
            method,
            ..cfg.clone()
        };
        let dir = cfg.out.join(method.name());
        log::info!("{method}: training");
        let outcome = train(&run, &data, &pretrained)?;
        let path = save_training(&dir, &run, &data, &outcome, elapsed_ms(started))?;
        let report = evaluate_into(&dir, &run, &data, &outcome.artifact, method, EvalSplit::Test)?;
        write_report_meta(
            &dir,
            &ReportMeta {
                method,
                seed: run.seed,
                split: "test",
                config_hash: run.hash(),
                descriptor_hash: data.descriptor_hash(),
                artifact: path.display().to_string(),
                artifact_sha256: file_sha256(&path)?,
                wall_ms: elapsed_ms(started),
            },
        )?;
        log::info!("{method}: whole R² {:.4}", report.r2("whole"));
        reports.push(report);
    }
    write_rows(
        &cfg.out.join("table.csv"),
        &["method", "whole_r2", "low_r2", "high_r2"],
        reports.iter().map(|r| {
            vec![
                r.method.to_string(),
                num(r.r2("whole")),
                num(r.r2("low")),
                num(r.r2("high")),
            ]
        }),
    )?;
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    InnerEpochs,
    MaxSplits,
    AdaptationSteps,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::InnerEpochs => "inner_epochs",
            SweepAxis::MaxSplits => "max_splits",
            SweepAxis::AdaptationSteps => "adaptation_steps",
        }
    }

    /// Copy of `cfg` with the axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: usize) -> ExperimentConfig {
        let mut c = cfg.clone();
        match self {
            SweepAxis::InnerEpochs => {
                c.meta.inner_epochs = value;
                c.hierarchy.inner_epochs = Some(value);
            }
            SweepAxis::MaxSplits => c.hierarchy.max_splits = value,
            SweepAxis::AdaptationSteps => c.meta.adaptation_steps = value,
        }
        c
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SweepAxis::InnerEpochs, SweepAxis::MaxSplits, SweepAxis::AdaptationSteps]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config("axis", format!("unknown sweep axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: usize,
    /// `None` when the cell failed.
    pub scores: Option<(f64, f64, f64)>,
}

/// Trains and evaluates once per value with the same seed and data.
pub fn sweep(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    pretrained: &PredictiveModel,
    axis: SweepAxis,
    values: &[usize],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("values", "at least one value is required"));
    }
    if let Some(v) = values.iter().find(|v| !(1..=8).contains(*v)) {
        return Err(Error::config("values", format!("{v} is outside [1, 8]")));
    }
    Ok(values
        .iter()
        .map(|&value| {
            let cell = axis.apply(cfg, value);
            let scores = cell
                .validate()
                .and_then(|_| run_experiment(&cell, data, pretrained))
                .map(|(_, r)| (r.r2("whole"), r.r2("low"), r.r2("high")));
            match &scores {
                Ok(s) => log::info!("{} = {value}: whole R² {:.4}", axis.name(), s.0),
                Err(e) => log::warn!("{} = {value} failed: {e}", axis.name()),
            }
            SweepRow {
                value,
                scores: scores.ok(),
            }
        })
        .collect())
}

/// `sweep`: writes `<out>/sweep_<axis>.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[usize]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let data = prepare(cfg)?;
    let pretrained = load_pretrained(cfg, &data)?;
    let rows = sweep(cfg, &data, &pretrained, axis, values)?;
    create_dir(&cfg.out)?;
    write_rows(
        &cfg.out.join(format!("sweep_{}.csv", axis.name())),
        &["axis", "value", "whole_r2", "low_r2", "high_r2"],
        rows.iter().map(|r| {
            let (w, l, h) = r.scores.unwrap_or((f64::NAN, f64::NAN, f64::NAN));
            vec![axis.name().to_string(), r.value.to_string(), num(w), num(l), num(h)]
        }),
    )?;
    Ok(rows)
}
