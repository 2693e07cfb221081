use std::collections::BTreeSet;
use std::path::Path;

use super::config::Method;
use super::run::{LogRow, RouteInfo, TaskResult};
use crate::error::{Error, Result};
use crate::hierarchy::{PartitionRecord, ThresholdEntry};
use crate::metalearn::r_squared;
use crate::tasks::{tercile_partition, Task};

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRow {
    pub task_id: u64,
    pub lat: f64,
    pub lon: f64,
    pub regime: Option<usize>,
    pub mean_label: f64,
    pub r2: f64,
    pub mse: f64,
    pub diverged: bool,
    pub cluster: Option<usize>,
    pub route: Option<RouteInfo>,
}

/// Scores pooled over every query sample of a task subset.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub subset: String,
    pub n_tasks: usize,
    pub n_diverged: usize,
    pub n_samples: usize,
    pub r2: f64,
    pub mse: f64,
    /// Mean of the per-task R² values, for comparison with the pooled figure.
    pub mean_task_r2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct YearRow {
    pub year: i32,
    pub n_samples: usize,
    pub r2: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub task_id: u64,
    pub sample_id: u64,
    pub year: i32,
    pub label: f64,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: Method,
    /// Ascending task id.
    pub tasks: Vec<TaskRow>,
    /// `whole`, `low`, `high`, then `regime-<r>` for every known regime.
    pub aggregates: Vec<AggregateRow>,
    pub years: Vec<YearRow>,
    /// Query predictions of every task that did not diverge.
    pub predictions: Vec<PredictionRow>,
}

impl MetricsReport {
    pub fn aggregate(&self, subset: &str) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.subset == subset)
    }

    /// Pooled R² of `subset`, NaN when absent.
    pub fn r2(&self, subset: &str) -> f64 {
        self.aggregate(subset).map_or(f64::NAN, |a| a.r2)
    }
}

fn pooled(rows: &[&PredictionRow]) -> (f64, f64) {
    if rows.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let labels: Vec<f64> = rows.iter().map(|p| p.label).collect();
    let preds: Vec<f64> = rows.iter().map(|p| p.prediction).collect();
    let r2 = r_squared(&labels, &preds).unwrap_or(f64::NAN);
    let mse = labels.iter().zip(&preds).map(|(y, p)| (y - p) * (y - p)).sum::<f64>() / labels.len() as f64;
    (r2, mse)
}

/// Builds the report from per-task results aligned with `tasks`.
pub fn build_report(method: Method, tasks: &[&Task], results: &[TaskResult]) -> Result<MetricsReport> {
    if tasks.len() != results.len() {
        return Err(Error::Argument(format!("{} tasks but {} results", tasks.len(), results.len())));
    }
    let mut pairs: Vec<(&Task, &TaskResult)> = tasks.iter().copied().zip(results).collect();
    pairs.sort_by_key(|(t, _)| t.task_id);

    let mut rows = Vec::with_capacity(pairs.len());
    let mut predictions = Vec::new();
    for (task, res) in &pairs {
        if res.eval.task_id != task.task_id {
            return Err(Error::Argument(format!(
                "result for task {} paired with task {}",
                res.eval.task_id, task.task_id
            )));
        }
        rows.push(TaskRow {
            task_id: task.task_id,
            lat: task.location.lat,
            lon: task.location.lon,
            regime: task.regime_id,
            mean_label: task.mean_query_label(),
            r2: res.eval.r2,
            mse: res.eval.mse,
            diverged: res.eval.diverged,
            cluster: res.cluster,
            route: res.route.clone(),
        });
        if !res.eval.diverged {
            for (s, &p) in task.query.iter().zip(&res.eval.predictions) {
                predictions.push(PredictionRow {
                    task_id: task.task_id,
                    sample_id: s.sample_id,
                    year: s.year,
                    label: s.label,
                    prediction: p,
                });
            }
        }
    }

    let terciles = tercile_partition(&rows.iter().map(|r| (r.task_id, r.mean_label)).collect::<Vec<_>>());
    let mut subsets: Vec<(String, Vec<u64>)> = vec![
        ("whole".into(), terciles.whole),
        ("low".into(), terciles.low),
        ("high".into(), terciles.high),
    ];
    let regimes: BTreeSet<usize> = rows.iter().filter_map(|r| r.regime).collect();
    for r in regimes {
        let ids = rows.iter().filter(|t| t.regime == Some(r)).map(|t| t.task_id).collect();
        subsets.push((format!("regime-{r}"), ids));
    }
    let aggregates = subsets
        .into_iter()
        .map(|(subset, ids)| {
            let members: Vec<&TaskRow> = rows.iter().filter(|r| ids.binary_search(&r.task_id).is_ok()).collect();
            let ok: Vec<f64> = members
                .iter()
                .filter(|r| !r.diverged && r.r2.is_finite())
                .map(|r| r.r2)
                .collect();
            let samples: Vec<&PredictionRow> = predictions
                .iter()
                .filter(|p| ids.binary_search(&p.task_id).is_ok())
                .collect();
            let (r2, mse) = pooled(&samples);
            AggregateRow {
                subset,
                n_tasks: members.len(),
                n_diverged: members.iter().filter(|r| r.diverged).count(),
                n_samples: samples.len(),
                r2,
                mse,
                mean_task_r2: if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().sum::<f64>() / ok.len() as f64
                },
            }
        })
        .collect();

    let all_years: BTreeSet<i32> = pairs.iter().flat_map(|(t, _)| t.query.iter().map(|s| s.year)).collect();
    let years = all_years
        .into_iter()
        .map(|year| {
            let samples: Vec<&PredictionRow> = predictions.iter().filter(|p| p.year == year).collect();
            let (r2, mse) = pooled(&samples);
            YearRow {
                year,
                n_samples: samples.len(),
                r2,
                mse,
            }
        })
        .collect();

    Ok(MetricsReport {
        method,
        tasks: rows,
        aggregates,
        years,
        predictions,
    })
}

/// Shortest round-trip text for finite values, `NA` otherwise.
pub(crate) fn num(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        "NA".to_string()
    }
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub(crate) fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let wrap = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `aggregate.csv`, `tasks.csv`, `years.csv`, `predictions.csv` and,
/// for routed results, `routing.csv` and `split_improvement.csv`.
pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    write_rows(
        &dir.join("aggregate.csv"),
        &["subset", "n_tasks", "n_diverged", "n_samples", "r2", "mse", "mean_task_r2"],
        report.aggregates.iter().map(|a| {
            vec![
                a.subset.clone(),
                a.n_tasks.to_string(),
                a.n_diverged.to_string(),
                a.n_samples.to_string(),
                num(a.r2),
                num(a.mse),
                num(a.mean_task_r2),
            ]
        }),
    )?;
    write_rows(
        &dir.join("tasks.csv"),
        &[
            "task_id", "lat", "lon", "regime", "mean_label", "r2", "mse", "diverged", "cluster", "layer", "leaf",
        ],
        report.tasks.iter().map(|t| {
            vec![
                t.task_id.to_string(),
                t.lat.to_string(),
                t.lon.to_string(),
                opt(t.regime),
                num(t.mean_label),
                num(t.r2),
                num(t.mse),
                t.diverged.to_string(),
                opt(t.cluster),
                opt(t.route.as_ref().map(|r| r.layer)),
                opt(t.route.as_ref().map(|r| r.leaf)),
            ]
        }),
    )?;
    write_rows(
        &dir.join("years.csv"),
        &["year", "n_samples", "r2", "mse"],
        report
            .years
            .iter()
            .map(|y| vec![y.year.to_string(), y.n_samples.to_string(), num(y.r2), num(y.mse)]),
    )?;
    write_rows(
        &dir.join("predictions.csv"),
        &["task_id", "sample_id", "year", "label", "prediction"],
        report.predictions.iter().map(|p| {
            vec![
                p.task_id.to_string(),
                p.sample_id.to_string(),
                p.year.to_string(),
                p.label.to_string(),
                p.prediction.to_string(),
            ]
        }),
    )?;
    let routed: Vec<(&TaskRow, &RouteInfo)> = report
        .tasks
        .iter()
        .filter_map(|t| t.route.as_ref().map(|r| (t, r)))
        .collect();
    if !routed.is_empty() {
        write_rows(
            &dir.join("routing.csv"),
            &["task_id", "lat", "lon", "layer", "leaf", "routing_r2", "final_r2"],
            routed.iter().map(|(t, r)| {
                vec![
                    t.task_id.to_string(),
                    t.lat.to_string(),
                    t.lon.to_string(),
                    r.layer.to_string(),
                    r.leaf.to_string(),
                    num(r.routing_r2),
                    num(t.r2),
                ]
            }),
        )?;
        write_rows(
            &dir.join("split_improvement.csv"),
            &["task_id", "layer", "leaf", "pre_split_r2", "routed_r2", "improvement"],
            routed.iter().map(|(t, r)| {
                vec![
                    t.task_id.to_string(),
                    r.layer.to_string(),
                    r.leaf.to_string(),
                    num(r.pre_split_r2),
                    num(t.r2),
                    num(t.r2 - r.pre_split_r2),
                ]
            }),
        )?;
    }
    Ok(())
}

pub fn write_training_log(path: &Path, log: &[LogRow]) -> Result<()> {
    write_rows(
        path,
        &["phase", "epoch", "pooled_loss", "mean_query_mse", "mean_query_r2", "tasks_skipped"],
        log.iter().map(|r| {
            vec![
                r.phase.clone(),
                r.epoch.to_string(),
                r.pooled_loss.map_or_else(|| "NA".into(), num),
                r.meta.as_ref().map_or_else(|| "NA".into(), |m| num(m.mean_query_mse)),
                r.meta.as_ref().map_or_else(|| "NA".into(), |m| num(m.mean_query_r2)),
                opt(r.meta.as_ref().map(|m| m.tasks_skipped)),
            ]
        }),
    )
}

pub fn write_threshold_log(path: &Path, log: &[ThresholdEntry]) -> Result<()> {
    write_rows(
        path,
        &["epoch", "layer", "gamma", "n_tasks", "n_hard"],
        log.iter().map(|e| {
            vec![
                e.epoch.to_string(),
                e.layer.to_string(),
                num(e.gamma),
                e.n_tasks.to_string(),
                e.n_hard.to_string(),
            ]
        }),
    )
}

/// One row per `(epoch, layer, task)` with its score and side of the split.
pub fn write_partitions(path: &Path, partitions: &[PartitionRecord]) -> Result<()> {
    write_rows(
        path,
        &["epoch", "layer", "task_id", "r2", "side"],
        partitions.iter().flat_map(|p| {
            p.scores.iter().map(move |&(id, r2)| {
                let side = if p.hard_ids.binary_search(&id).is_ok() { "hard" } else { "easy" };
                vec![p.epoch.to_string(), p.layer.to_string(), id.to_string(), num(r2), side.to_string()]
            })
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metalearn::scalar::task;
    use crate::metalearn::TaskEvaluation;

    fn result(id: u64, preds: Vec<f64>, labels: &[f64]) -> TaskResult {
        TaskResult {
            eval: TaskEvaluation {
                task_id: id,
                r2: r_squared(labels, &preds).unwrap(),
                mse: 0.0,
                predictions: preds,
                diverged: false,
            },
            cluster: None,
            route: None,
        }
    }

    #[test]
    fn aggregates_pool_samples_rather_than_averaging_task_scores() {
        let a = task(1, &[(1.0, 0.0)], &[(1.0, 0.0), (2.0, 1.0)]);
        let b = task(2, &[(1.0, 0.0)], &[(1.0, 10.0), (2.0, 11.0)]);
        let c = task(3, &[(1.0, 0.0)], &[(1.0, 20.0), (2.0, 22.0)]);
        let results = vec![
            result(1, vec![0.5, 0.5], &[0.0, 1.0]),
            result(2, vec![10.0, 11.0], &[10.0, 11.0]),
            result(3, vec![20.0, 22.0], &[20.0, 22.0]),
        ];
        let r = build_report(Method::OriginMaml, &[&a, &b, &c], &results).unwrap();
        let labels = [0.0, 1.0, 10.0, 11.0, 20.0, 22.0];
        let preds = [0.5, 0.5, 10.0, 11.0, 20.0, 22.0];
        assert_eq!(r.r2("whole"), r_squared(&labels, &preds).unwrap());
        assert_eq!(r.aggregate("whole").unwrap().mean_task_r2, (0.0 + 1.0 + 1.0) / 3.0);
        assert_eq!(r.r2("low"), r_squared(&labels[..4], &preds[..4]).unwrap());
        assert_eq!(r.r2("high"), r_squared(&labels[2..], &preds[2..]).unwrap());
        assert_eq!(r.predictions.len(), 6);
    }

    #[test]
    fn diverged_tasks_are_counted_but_not_pooled() {
        let a = task(1, &[(1.0, 0.0)], &[(1.0, 0.0), (2.0, 1.0)]);
        let b = task(2, &[(1.0, 0.0)], &[(1.0, 5.0), (2.0, 6.0)]);
        let mut bad = result(2, vec![0.0, 0.0], &[0.0, 1.0]);
        bad.eval = TaskEvaluation {
            task_id: 2,
            r2: f64::NEG_INFINITY,
            mse: f64::INFINITY,
            predictions: vec![],
            diverged: true,
        };
        let r = build_report(Method::OriginMaml, &[&a, &b], &[result(1, vec![0.0, 1.0], &[0.0, 1.0]), bad]).unwrap();
        let whole = r.aggregate("whole").unwrap();
        assert_eq!((whole.n_tasks, whole.n_diverged, whole.n_samples), (2, 1, 2));
        assert_eq!(whole.r2, 1.0);
    }
}
