use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{encode_model, model_io::decode_from, PredictiveModel};
use crate::error::{Error, Result};
use crate::metalearn::{train_origin_maml, EpochLog, Learner, MetaConfig};
use crate::seed::derive_seed;
use crate::tasks::Task;

/// Per-feature means and stds over the support windows, then the mean
/// support label: length `2F + 1`.
pub fn task_embedding(task: &Task, n_features: usize) -> Vec<f64> {
    let f = n_features;
    let rows = || task.support.iter().flat_map(|s| s.features.chunks(f));
    let count = rows().count().max(1) as f64;
    let mut mean = vec![0.0; f];
    for row in rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; f];
    for row in rows() {
        for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let label = task.support.iter().map(|s| s.label).sum::<f64>() / task.support.len().max(1) as f64;
    mean.into_iter()
        .chain(var.into_iter().map(|v| (v / count).sqrt()))
        .chain(std::iter::once(label))
        .collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(point, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
    /// Sum of squared distances after every assignment step.
    pub objective_trace: Vec<f64>,
}

fn objective(points: &[Vec<f64>], centroids: &[Vec<f64>], assign: &[usize]) -> f64 {
    points.iter().zip(assign).map(|(p, &a)| dist2(p, &centroids[a])).sum()
}

/// Lloyd iterations from a seeded k-means++ start, until the assignment
/// stops changing or `max_iters` is reached.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::Argument("k-means needs K ≥ 1".into()));
    }
    if points.len() < k {
        return Err(Error::Argument(format!("k-means with K = {k} needs at least {k} points, got {}", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Argument("k-means points have differing dimensions".into()));
    }
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "kmeans", 0));
    let mut chosen = vec![rng.random_range(0..n)];
    while chosen.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| chosen.iter().map(|&c| dist2(p, &points[c])).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, di) in d.iter().enumerate() {
                if *di > 0.0 && u < *di {
                    pick = i;
                    break;
                }
                u -= di;
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("n ≥ k")
        };
        chosen.push(next);
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].clone()).collect();
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut trace = vec![objective(points, &centroids, &assign)];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&i, &j| {
                        let di = dist2(&points[i], &centroids[assign[i]]);
                        let dj = dist2(&points[j], &centroids[assign[j]]);
                        di.total_cmp(&dj).then(j.cmp(&i))
                    })
                    .expect("non-empty");
                centroids[c] = points[far].clone();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        trace.push(objective(points, &centroids, &next));
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok(KMeans {
        centroids,
        assignments: assign,
        iterations,
        objective_trace: trace,
    })
}

/// K cluster centroids over task embeddings, with one meta-model per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel<M = PredictiveModel> {
    pub centroids: Vec<Vec<f64>>,
    pub models: Vec<M>,
    /// `(task_id, cluster)` for every training task.
    pub assignments: Vec<(u64, usize)>,
    pub n_features: usize,
}

impl<M> ClusterModel<M> {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn assign(&self, task: &Task) -> usize {
        nearest(&task_embedding(task, self.n_features), &self.centroids)
    }
}

/// Clusters train tasks by embedding and trains MAML per cluster with the
/// same seed. Returns the per-cluster training logs too.
pub fn train_condition_maml<M: Learner>(
    train: &[&Task],
    init: &M,
    meta: &MetaConfig,
    k: usize,
    n_features: usize,
) -> Result<(ClusterModel<M>, Vec<Vec<EpochLog>>)> {
    let mut ordered: Vec<&Task> = train.to_vec();
    ordered.sort_by_key(|t| t.task_id);
    let points: Vec<Vec<f64>> = ordered.iter().map(|t| task_embedding(t, n_features)).collect();
    let km = kmeans(&points, k, meta.seed, 100)?;
    let mut models = Vec::with_capacity(k);
    let mut logs = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<&Task> = ordered
            .iter()
            .zip(&km.assignments)
            .filter(|(_, &a)| a == c)
            .map(|(t, _)| *t)
            .collect();
        if members.len() < meta.task_batch_size {
            log::warn!(
                "cluster {c} has {} tasks; batch size clamped from {}",
                members.len(),
                meta.task_batch_size
            );
        }
        if members.is_empty() {
            models.push(init.clone());
            logs.push(Vec::new());
            continue;
        }
        let out = train_origin_maml(&members, init, meta)?;
        models.push(out.model);
        logs.push(out.log);
    }
    Ok((
        ClusterModel {
            centroids: km.centroids,
            models,
            assignments: ordered.iter().map(|t| t.task_id).zip(km.assignments).collect(),
            n_features,
        },
        logs,
    ))
}

const MAGIC: &[u8; 8] = b"HMAMLCLU";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    n_features: usize,
    centroids: Vec<Vec<f64>>,
    assignments: Vec<(u64, usize)>,
}

/// Container: magic, version, JSON metadata, then one model per cluster.
pub fn encode_clusters(c: &ClusterModel) -> Vec<u8> {
    let json = serde_json::to_vec(&Meta {
        n_features: c.n_features,
        centroids: c.centroids.clone(),
        assignments: c.assignments.clone(),
    })
    .expect("cluster metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    out.write_u32::<LittleEndian>(json.len() as u32).unwrap();
    out.extend_from_slice(&json);
    for m in &c.models {
        out.extend(encode_model(m));
    }
    out
}

pub fn decode_clusters(bytes: &[u8], origin: &Path) -> Result<ClusterModel> {
    let bad = |d: &str| Error::format(origin, d);
    let mut cursor = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cursor.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a cluster model file"));
    }
    let version = cursor.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported cluster format version {version}")));
    }
    let len = cursor.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    if len > bytes.len() - cursor.position() as usize {
        return Err(bad("truncated metadata"));
    }
    let mut json = vec![0u8; len];
    cursor.read_exact(&mut json).map_err(|_| bad("truncated metadata"))?;
    let meta: Meta = serde_json::from_slice(&json).map_err(|e| bad(&format!("metadata: {e}")))?;
    let models = (0..meta.centroids.len())
        .map(|_| decode_from(&mut cursor, origin))
        .collect::<Result<Vec<_>>>()?;
    if cursor.position() as usize != bytes.len() {
        return Err(bad("trailing bytes after the last model"));
    }
    Ok(ClusterModel {
        centroids: meta.centroids,
        models,
        assignments: meta.assignments,
        n_features: meta.n_features,
    })
}

pub fn save_clusters(c: &ClusterModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_clusters(c)).map_err(|e| Error::io(path, e))
}

pub fn load_clusters(path: &Path) -> Result<ClusterModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_clusters(&bytes, path)
}
