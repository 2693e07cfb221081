//! Few-shot regression tasks: one location's support and query windows.

mod csvio;
mod normalize;
mod synthetic;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use csvio::{data_header, export_csv, export_regimes, load_csv, load_descriptor, load_regimes};
pub use normalize::{apply_normalization, normalize, Normalized};
pub use synthetic::{generate_synthetic, Nonlinearity, RegimeSpec, SyntheticConfig, SyntheticData};

/// Daily input features, in column order.
pub const FEATURE_NAMES: [&str; 19] = [
    "RADN", "TMAX_AIR", "TDIF_AIR", "HMAX_AIR", "HDIF_AIR", "WIND", "PRECN", "Crop_Type", "TBKDS", "TSAND", "TSILT",
    "TFC", "TWP", "TKSat", "TSOC", "TPH", "TCEC", "GPP", "YEAR",
];

/// Names for `n` features: the standard table first, generic names past it.
pub fn default_feature_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match FEATURE_NAMES.get(i) {
            Some(name) => name.to_string(),
            None => format!("FEATURE_{i}"),
        })
        .collect()
}

/// One `T×F` window (row-major, time-major) with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub features: Vec<f64>,
    pub label: f64,
    pub year: i32,
    pub sample_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub task_id: u64,
    pub location: Location,
    pub support: Vec<SampleWindow>,
    pub query: Vec<SampleWindow>,
    /// Ground-truth regime for synthetic data.
    pub regime_id: Option<usize>,
}

fn windows(samples: &[SampleWindow]) -> Vec<&[f64]> {
    samples.iter().map(|s| s.features.as_slice()).collect()
}

fn labels(samples: &[SampleWindow]) -> Vec<f64> {
    samples.iter().map(|s| s.label).collect()
}

impl Task {
    pub fn support_windows(&self) -> Vec<&[f64]> {
        windows(&self.support)
    }

    pub fn support_labels(&self) -> Vec<f64> {
        labels(&self.support)
    }

    pub fn query_windows(&self) -> Vec<&[f64]> {
        windows(&self.query)
    }

    pub fn query_labels(&self) -> Vec<f64> {
        labels(&self.query)
    }

    pub fn mean_query_label(&self) -> f64 {
        self.query.iter().map(|s| s.label).sum::<f64>() / self.query.len().max(1) as f64
    }

    /// Checks non-empty splits, disjoint sample ids, and that every support
    /// year precedes every query year.
    pub fn validate(&self) -> Result<()> {
        if self.support.is_empty() || self.query.is_empty() {
            return Err(Error::Input(format!("task {} has an empty support or query set", self.task_id)));
        }
        let support_ids: HashSet<u64> = self.support.iter().map(|s| s.sample_id).collect();
        if support_ids.len() != self.support.len() || self.query.iter().any(|s| support_ids.contains(&s.sample_id)) {
            return Err(Error::Input(format!("task {} has overlapping sample ids", self.task_id)));
        }
        let last_support = self.support.iter().map(|s| s.year).max().unwrap();
        let first_query = self.query.iter().map(|s| s.year).min().unwrap();
        if last_support >= first_query {
            return Err(Error::Input(format!(
                "task {}: support year {last_support} does not precede query year {first_query}",
                self.task_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub label_min: f64,
    pub label_max: f64,
}

impl NormalizationStats {
    /// Maps a normalized label back to the original scale.
    pub fn denormalize_label(&self, y: f64) -> f64 {
        let span = self.label_max - self.label_min;
        if span > 0.0 {
            y * span + self.label_min
        } else {
            y + self.label_min
        }
    }
}

/// Shared shape and split rule of every task in a set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    #[serde(rename = "T")]
    pub seq_len: usize,
    #[serde(rename = "F")]
    pub n_features: usize,
    pub k: usize,
    pub l: usize,
    pub support_year_cutoff: i32,
    pub feature_names: Vec<String>,
    pub normalization: Option<NormalizationStats>,
}

impl DatasetDescriptor {
    pub fn window_len(&self) -> usize {
        self.seq_len * self.n_features
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("descriptor serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    pub tasks: Vec<Task>,
    pub descriptor: DatasetDescriptor,
}

impl TaskSet {
    pub fn new(tasks: Vec<Task>, descriptor: DatasetDescriptor) -> Result<Self> {
        if descriptor.feature_names.len() != descriptor.n_features {
            return Err(Error::Input(format!(
                "descriptor lists {} feature names for F = {}",
                descriptor.feature_names.len(),
                descriptor.n_features
            )));
        }
        let mut seen = HashSet::new();
        let window = descriptor.window_len();
        for task in &tasks {
            if !seen.insert(task.task_id) {
                return Err(Error::Input(format!("duplicate task id {}", task.task_id)));
            }
            task.validate()?;
            for s in task.support.iter().chain(&task.query) {
                if s.features.len() != window {
                    return Err(Error::Dimension {
                        axis: "window length (T×F)",
                        expected: window,
                        actual: s.features.len(),
                    });
                }
                if !s.label.is_finite() {
                    return Err(Error::Input(format!(
                        "task {} sample {} has a non-finite label",
                        task.task_id, s.sample_id
                    )));
                }
            }
        }
        Ok(Self { tasks, descriptor })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.descriptor.normalization.is_some()
    }

    pub fn task(&self, task_id: u64) -> Option<&Task> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn ids(&self) -> Vec<u64> {
        self.tasks.iter().map(|t| t.task_id).collect()
    }

    /// Subset in the given id order; unknown ids are skipped.
    pub fn subset(&self, ids: &[u64]) -> Vec<&Task> {
        ids.iter().filter_map(|&id| self.task(id)).collect()
    }
}

/// Task-id sets for the whole / low-yield / high-yield breakdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TercilePartition {
    pub whole: Vec<u64>,
    /// Everything except the top third.
    pub low: Vec<u64>,
    /// Everything except the bottom third.
    pub high: Vec<u64>,
}

/// Ranks tasks by mean label (ties by ascending id) and drops the top or
/// bottom `⌊n/3⌋` to form the low and high sets.
pub fn tercile_partition(means: &[(u64, f64)]) -> TercilePartition {
    let mut ranked = means.to_vec();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let n = ranked.len();
    let cut = n / 3;
    let sorted_ids = |slice: &[(u64, f64)]| {
        let mut ids: Vec<u64> = slice.iter().map(|p| p.0).collect();
        ids.sort_unstable();
        ids
    };
    TercilePartition {
        whole: sorted_ids(&ranked),
        low: sorted_ids(&ranked[..n - cut]),
        high: sorted_ids(&ranked[cut..]),
    }
}
