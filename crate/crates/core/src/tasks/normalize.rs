use super::{NormalizationStats, TaskSet};
use crate::error::{Error, Result};

/// Normalized train set plus the other sets transformed with train statistics.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub train: TaskSet,
    pub others: Vec<TaskSet>,
    pub stats: NormalizationStats,
    /// Indices of features with zero variance in the train set.
    pub constant_features: Vec<usize>,
}

fn feature_stats(set: &TaskSet) -> (Vec<f64>, Vec<f64>) {
    let f = set.descriptor.n_features;
    let samples = || set.tasks.iter().flat_map(|t| t.support.iter().chain(&t.query));
    let mut count = 0usize;
    let mut mean = vec![0.0; f];
    for s in samples() {
        for row in s.features.chunks(f) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; f];
    for s in samples() {
        for row in s.features.chunks(f) {
            for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
    }
    let std = var
        .iter()
        .zip(&mean)
        .map(|(v, m)| {
            let s = (v / n).sqrt();
            if s <= 1e-12 * m.abs().max(1.0) {
                0.0
            } else {
                s
            }
        })
        .collect();
    (mean, std)
}

/// Applies previously computed statistics to an unnormalized set.
pub fn apply_normalization(set: &TaskSet, stats: &NormalizationStats) -> Result<TaskSet> {
    if set.is_normalized() {
        return Err(Error::AlreadyNormalized);
    }
    let f = set.descriptor.n_features;
    if stats.feature_means.len() != f || stats.feature_stds.len() != f {
        return Err(Error::Dimension {
            axis: "feature count",
            expected: f,
            actual: stats.feature_means.len(),
        });
    }
    let span = stats.label_max - stats.label_min;
    let mut out = set.clone();
    for task in &mut out.tasks {
        for s in task.support.iter_mut().chain(task.query.iter_mut()) {
            for row in s.features.chunks_mut(f) {
                for ((v, m), sd) in row.iter_mut().zip(&stats.feature_means).zip(&stats.feature_stds) {
                    *v -= m;
                    if *sd > 0.0 {
                        *v /= sd;
                    }
                }
            }
            s.label -= stats.label_min;
            if span > 0.0 {
                s.label /= span;
            }
        }
    }
    out.descriptor.normalization = Some(stats.clone());
    Ok(out)
}

/// Z-scores features and min-max scales labels using statistics from the
/// train set's support and query windows only.
pub fn normalize(train: &TaskSet, others: &[&TaskSet]) -> Result<Normalized> {
    if train.is_normalized() || others.iter().any(|s| s.is_normalized()) {
        return Err(Error::AlreadyNormalized);
    }
    for other in others {
        if other.descriptor.n_features != train.descriptor.n_features {
            return Err(Error::Dimension {
                axis: "feature count",
                expected: train.descriptor.n_features,
                actual: other.descriptor.n_features,
            });
        }
    }
    let (feature_means, feature_stds) = feature_stats(train);
    let labels = train
        .tasks
        .iter()
        .flat_map(|t| t.support.iter().chain(&t.query))
        .map(|s| s.label);
    let (label_min, label_max) = labels.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    if !label_min.is_finite() {
        return Err(Error::Input("cannot normalize an empty train set".into()));
    }
    let constant_features: Vec<usize> = (0..feature_stds.len()).filter(|&i| feature_stds[i] == 0.0).collect();
    for &i in &constant_features {
        log::warn!(
            "feature {} has zero variance in the train set; centering only",
            train.descriptor.feature_names[i]
        );
    }
    let stats = NormalizationStats {
        feature_means,
        feature_stds,
        label_min,
        label_max,
    };
    Ok(Normalized {
        train: apply_normalization(train, &stats)?,
        others: others.iter().map(|s| apply_normalization(s, &stats)).collect::<Result<_>>()?,
        stats,
        constant_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{default_feature_names, DatasetDescriptor, Location, SampleWindow, Task};

    fn set(values: &[(f64, f64)]) -> TaskSet {
        // one feature, T = 1; two tasks split the values
        let mk = |i: usize, (x, y): (f64, f64), year| SampleWindow {
            features: vec![x, 5.0],
            label: y,
            year,
            sample_id: i as u64,
        };
        let tasks = values
            .chunks(2)
            .enumerate()
            .map(|(t, pair)| Task {
                task_id: t as u64,
                location: Location { lat: 0.0, lon: 0.0 },
                support: vec![mk(0, pair[0], 2000)],
                query: vec![mk(1, pair[1], 2010)],
                regime_id: None,
            })
            .collect();
        TaskSet::new(
            tasks,
            DatasetDescriptor {
                seq_len: 1,
                n_features: 2,
                k: 1,
                l: 1,
                support_year_cutoff: 2005,
                feature_names: default_feature_names(2),
                normalization: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn z_score_example() {
        // mean 10, population std 2
        let train = set(&[(8.0, 0.0), (12.0, 4.0), (8.0, 2.0), (12.0, 1.0)]);
        let test = set(&[(14.0, 3.0), (10.0, 8.0)]);
        let n = normalize(&train, &[&test]).unwrap();
        assert_eq!(n.stats.feature_means[0], 10.0);
        assert_eq!(n.stats.feature_stds[0], 2.0);
        assert_eq!(n.others[0].tasks[0].support[0].features[0], 2.0);
        // labels scaled by the train range [0, 4]; test labels may leave [0, 1]
        assert_eq!(n.others[0].tasks[0].query[0].label, 2.0);
        assert_eq!(n.train.tasks[0].query[0].label, 1.0);
    }

    #[test]
    fn constant_feature_is_centered_only() {
        let train = set(&[(8.0, 0.0), (12.0, 4.0)]);
        let n = normalize(&train, &[]).unwrap();
        assert_eq!(n.constant_features, vec![1]);
        assert!(n.train.tasks[0].support[0].features[1].abs() < 1e-15);
    }

    #[test]
    fn normalizing_twice_is_rejected() {
        let train = set(&[(8.0, 0.0), (12.0, 4.0)]);
        let n = normalize(&train, &[]).unwrap();
        assert!(matches!(normalize(&n.train, &[]), Err(Error::AlreadyNormalized)));
        assert!(matches!(normalize(&train, &[&n.train]), Err(Error::AlreadyNormalized)));
    }
}
