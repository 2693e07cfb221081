//! Synthetic grid benchmark with spatially contiguous label-function regimes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{default_feature_names, DatasetDescriptor, Location, SampleWindow, Task, TaskSet};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Shape of the label function applied to the per-feature time means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Nonlinearity {
    Linear,
    Sin { freq: f64, phase: f64 },
    /// Adds `scale · Σ m_f m_{f+1} / √F` to the linear term.
    Interaction { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSpec {
    /// Share of grid columns.
    pub fraction: f64,
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    /// Overrides the seeded regime weights when given (length F).
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Added to every feature level in this regime.
    #[serde(default)]
    pub feature_shift: f64,
}

fn default_noise() -> f64 {
    0.05
}

impl RegimeSpec {
    pub fn new(fraction: f64, nonlinearity: Nonlinearity) -> Self {
        Self {
            fraction,
            nonlinearity,
            offset: 0.0,
            noise_std: default_noise(),
            weights: None,
            feature_shift: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub rows: usize,
    pub cols: usize,
    /// Side of the square blocks the spatial test split draws from.
    pub block_size: usize,
    pub test_fraction: f64,
    pub seq_len: usize,
    pub n_features: usize,
    pub k: usize,
    pub l: usize,
    pub samples_per_task: usize,
    pub first_year: i32,
    pub support_years: usize,
    pub query_years: usize,
    /// Std of the per-task weight perturbation.
    pub task_perturbation: f64,
    pub regimes: Vec<RegimeSpec>,
    pub pretrain_tasks: usize,
    pub pretrain_samples: usize,
    /// Std of the gap between simulated (pretraining) and real base-regime weights.
    pub pretrain_weight_gap: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            rows: 10,
            cols: 10,
            block_size: 2,
            test_fraction: 0.2,
            seq_len: 12,
            n_features: 19,
            k: 25,
            l: 75,
            samples_per_task: 100,
            first_year: 2000,
            support_years: 5,
            query_years: 15,
            task_perturbation: 0.1,
            regimes: vec![
                RegimeSpec::new(0.8, Nonlinearity::Linear),
                RegimeSpec {
                    offset: -1.0,
                    ..RegimeSpec::new(0.2, Nonlinearity::Sin { freq: 2.0, phase: 0.5 })
                },
            ],
            pretrain_tasks: 40,
            pretrain_samples: 200,
            pretrain_weight_gap: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |f: &str, d: &str| Err(Error::config(f, d));
        if self.rows == 0 || self.cols == 0 {
            return field("rows", "grid must have at least one row and column");
        }
        if self.block_size == 0 {
            return field("block_size", "must be positive");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return field("test_fraction", "must lie in [0, 1)");
        }
        if self.seq_len == 0 || self.n_features == 0 {
            return field("seq_len", "T and F must be positive");
        }
        if self.k == 0 || self.l == 0 {
            return field("k", "k and l must be positive");
        }
        if self.support_years == 0 || self.query_years == 0 {
            return field("support_years", "need at least one support and one query year");
        }
        let (ns, nq) = pool_sizes(self.samples_per_task, self.k, self.l);
        if ns < self.k || nq < self.l {
            return field(
                "samples_per_task",
                &format!("{} samples cannot supply k = {} and l = {}", self.samples_per_task, self.k, self.l),
            );
        }
        if self.regimes.is_empty() {
            return field("regimes", "at least one regime is required");
        }
        let total: f64 = self.regimes.iter().map(|r| r.fraction).sum();
        if self.regimes.iter().any(|r| !(r.fraction > 0.0)) || (total - 1.0).abs() > 1e-6 {
            return field("regimes", "fractions must be positive and sum to 1");
        }
        for r in &self.regimes {
            if let Some(w) = &r.weights {
                if w.len() != self.n_features {
                    return field("regimes.weights", &format!("expected {} weights", self.n_features));
                }
            }
            if !(r.noise_std >= 0.0) {
                return field("regimes.noise_std", "must be non-negative");
            }
        }
        if !(self.pretrain_weight_gap >= 0.0) {
            return field("pretrain_weight_gap", "must be non-negative");
        }
        if self.pretrain_tasks > 0 && self.pretrain_samples < 2 {
            return field("pretrain_samples", "need at least 2 samples per pretraining task");
        }
        Ok(())
    }

    pub fn cutoff_year(&self) -> i32 {
        self.first_year + self.support_years as i32
    }
}

/// Train, test, and pretraining task sets.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: TaskSet,
    pub test: TaskSet,
    pub pretrain: TaskSet,
}

/// Support/query pool sizes, proportional to `k : l`.
fn pool_sizes(total: usize, k: usize, l: usize) -> (usize, usize) {
    let ns = ((total * k) as f64 / (k + l) as f64).round() as usize;
    (ns, total - ns)
}

/// Integer shares of `total` proportional to `weights`; remainders go to the
/// largest fractional parts, ties to the lower index.
pub(crate) fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Resolved label function of one regime.
struct LabelFn {
    weights: Vec<f64>,
    nonlinearity: Nonlinearity,
    offset: f64,
    noise_std: f64,
    feature_shift: f64,
}

impl LabelFn {
    fn eval(&self, weights: &[f64], means: &[f64]) -> f64 {
        let z: f64 = weights.iter().zip(means).map(|(w, m)| w * m).sum();
        let f = means.len();
        let y = match self.nonlinearity {
            Nonlinearity::Linear => z,
            Nonlinearity::Sin { freq, phase } => (freq * z + phase).sin(),
            Nonlinearity::Interaction { scale } => {
                let cross: f64 = (0..f).map(|i| means[i] * means[(i + 1) % f]).sum();
                z + scale * cross / (f as f64).sqrt()
            }
        };
        y + self.offset
    }
}

fn regime_functions(cfg: &SyntheticConfig) -> Vec<LabelFn> {
    let f = cfg.n_features;
    cfg.regimes
        .iter()
        .enumerate()
        .map(|(r, spec)| {
            let weights = spec.weights.clone().unwrap_or_else(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "regime", r as u64));
                (0..f)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .map(|w: f64| w / (f as f64).sqrt())
                    .collect()
            });
            LabelFn {
                weights,
                nonlinearity: spec.nonlinearity.clone(),
                offset: spec.offset,
                noise_std: spec.noise_std,
                feature_shift: spec.feature_shift,
            }
        })
        .collect()
}

/// Base regime as the pretraining simulator sees it.
fn simulated_base(cfg: &SyntheticConfig, base: &LabelFn) -> LabelFn {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "simulator", 0));
    let scale = cfg.pretrain_weight_gap / (cfg.n_features as f64).sqrt();
    LabelFn {
        weights: base
            .weights
            .iter()
            .map(|w| {
                let e: f64 = StandardNormal.sample(&mut rng);
                w + scale * e
            })
            .collect(),
        nonlinearity: base.nonlinearity.clone(),
        offset: base.offset,
        noise_std: 0.0,
        feature_shift: base.feature_shift,
    }
}

/// One window: per-feature levels plus a seasonal wave and daily noise.
fn draw_window<R: Rng>(rng: &mut R, t_len: usize, f_len: usize, shift: f64) -> (Vec<f64>, Vec<f64>) {
    let levels: Vec<f64> = (0..f_len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            shift + z
        })
        .collect();
    let mut window = Vec::with_capacity(t_len * f_len);
    for t in 0..t_len {
        for (f, level) in levels.iter().enumerate() {
            let phase = std::f64::consts::TAU * t as f64 / t_len as f64 + f as f64;
            let eps: f64 = StandardNormal.sample(rng);
            window.push(level + 0.3 * phase.sin() + 0.5 * eps);
        }
    }
    let mut means = vec![0.0; f_len];
    for row in window.chunks(f_len) {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= t_len as f64;
    }
    (window, means)
}

struct TaskSpec<'a> {
    task_id: u64,
    location: Location,
    regime: usize,
    func: &'a LabelFn,
    n_support_pool: usize,
    n_query_pool: usize,
    k: usize,
    l: usize,
    perturbation: f64,
    noise: bool,
}

fn build_task(cfg: &SyntheticConfig, spec: TaskSpec<'_>, stream: &str) -> Task {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream, spec.task_id));
    let scale = spec.perturbation / (cfg.n_features as f64).sqrt();
    let weights: Vec<f64> = spec
        .func
        .weights
        .iter()
        .map(|w| {
            let e: f64 = StandardNormal.sample(&mut rng);
            w + scale * e
        })
        .collect();
    let noise = Normal::new(0.0, if spec.noise { spec.func.noise_std } else { 0.0 }).expect("finite std");
    let cutoff = cfg.cutoff_year();
    let make = |id: usize, year: i32, rng: &mut ChaCha8Rng| {
        let (features, means) = draw_window(rng, cfg.seq_len, cfg.n_features, spec.func.feature_shift);
        SampleWindow {
            features,
            label: spec.func.eval(&weights, &means) + noise.sample(rng),
            year,
            sample_id: id as u64,
        }
    };
    let support_pool: Vec<SampleWindow> = (0..spec.n_support_pool)
        .map(|i| make(i, cfg.first_year + (i % cfg.support_years) as i32, &mut rng))
        .collect();
    let query_pool: Vec<SampleWindow> = (0..spec.n_query_pool)
        .map(|i| make(spec.n_support_pool + i, cutoff + (i % cfg.query_years) as i32, &mut rng))
        .collect();
    Task {
        task_id: spec.task_id,
        location: spec.location,
        support: choose_in_order(support_pool, spec.k, &mut rng),
        query: choose_in_order(query_pool, spec.l, &mut rng),
        regime_id: Some(spec.regime),
    }
}

/// Uniform subset of size `n`, kept in pool order.
pub(crate) fn choose_in_order<T, R: Rng>(pool: Vec<T>, n: usize, rng: &mut R) -> Vec<T> {
    if n >= pool.len() {
        return pool;
    }
    let mut picked = rand::seq::index::sample(rng, pool.len(), n).into_vec();
    picked.sort_unstable();
    let mut keep = vec![false; pool.len()];
    for i in picked {
        keep[i] = true;
    }
    pool.into_iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s).collect()
}

/// Column band of each regime, left to right.
fn column_regimes(cfg: &SyntheticConfig) -> Vec<usize> {
    let fractions: Vec<f64> = cfg.regimes.iter().map(|r| r.fraction).collect();
    let counts = largest_remainder(cfg.cols, &fractions);
    counts.iter().enumerate().flat_map(|(r, &c)| std::iter::repeat_n(r, c)).collect()
}

/// Picks test cells block by block, stratified so every regime contributes
/// its proportional share.
fn spatial_test_cells(cfg: &SyntheticConfig, regime_of: &[usize]) -> Vec<bool> {
    let n = cfg.rows * cfg.cols;
    let n_test = (cfg.test_fraction * n as f64).round() as usize;
    let n_regimes = cfg.regimes.len();
    let mut sizes = vec![0usize; n_regimes];
    for &r in regime_of {
        sizes[r] += cfg.rows;
    }
    let weights: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let quotas = largest_remainder(n_test, &weights);

    let bs = cfg.block_size;
    let blocks_r = cfg.rows.div_ceil(bs);
    let blocks_c = cfg.cols.div_ceil(bs);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "split", 0));
    let mut is_test = vec![false; n];
    for (regime, &quota) in quotas.iter().enumerate() {
        // cells of this regime grouped by block, row-major inside each block
        let mut units: Vec<Vec<usize>> = Vec::new();
        for br in 0..blocks_r {
            for bc in 0..blocks_c {
                let mut cells = Vec::new();
                for r in br * bs..((br + 1) * bs).min(cfg.rows) {
                    for c in bc * bs..((bc + 1) * bs).min(cfg.cols) {
                        if regime_of[c] == regime {
                            cells.push(r * cfg.cols + c);
                        }
                    }
                }
                if !cells.is_empty() {
                    units.push(cells);
                }
            }
        }
        units.shuffle(&mut rng);
        let mut need = quota;
        for unit in units {
            if need == 0 {
                break;
            }
            for &cell in unit.iter().take(need) {
                is_test[cell] = true;
            }
            need = need.saturating_sub(unit.len());
        }
    }
    is_test
}

/// Generates the grid benchmark. Task ids are `row · cols + col`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let funcs = regime_functions(cfg);
    let regime_of = column_regimes(cfg);
    let is_test = spatial_test_cells(cfg, &regime_of);
    let (ns, nq) = pool_sizes(cfg.samples_per_task, cfg.k, cfg.l);

    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            let id = r * cfg.cols + c;
            let regime = regime_of[c];
            let task = build_task(
                cfg,
                TaskSpec {
                    task_id: id as u64,
                    location: Location {
                        lat: 37.0 + 0.5 * r as f64,
                        lon: -95.0 + 0.5 * c as f64,
                    },
                    regime,
                    func: &funcs[regime],
                    n_support_pool: ns,
                    n_query_pool: nq,
                    k: cfg.k,
                    l: cfg.l,
                    perturbation: cfg.task_perturbation,
                    noise: true,
                },
                "task",
            );
            if is_test[id] {
                test.push(task);
            } else {
                train.push(task);
            }
        }
    }

    let descriptor = DatasetDescriptor {
        seq_len: cfg.seq_len,
        n_features: cfg.n_features,
        k: cfg.k,
        l: cfg.l,
        support_year_cutoff: cfg.cutoff_year(),
        feature_names: default_feature_names(cfg.n_features),
        normalization: None,
    };

    let n_pre = cfg.pretrain_samples.max(2);
    let pk = pool_sizes(n_pre, cfg.k, cfg.l).0.clamp(1, n_pre - 1);
    let pl = n_pre - pk;
    let simulated = simulated_base(cfg, &funcs[0]);
    let pretrain: Vec<Task> = (0..cfg.pretrain_tasks)
        .map(|i| {
            build_task(
                cfg,
                TaskSpec {
                    task_id: i as u64,
                    location: Location { lat: 0.0, lon: 0.0 },
                    regime: 0,
                    func: &simulated,
                    n_support_pool: pk,
                    n_query_pool: pl,
                    k: pk,
                    l: pl,
                    perturbation: 0.0,
                    noise: false,
                },
                "pretrain",
            )
        })
        .collect();
    let pretrain_descriptor = DatasetDescriptor {
        k: pk,
        l: pl,
        ..descriptor.clone()
    };

    Ok(SyntheticData {
        train: TaskSet::new(train, descriptor.clone())?,
        test: TaskSet::new(test, descriptor)?,
        pretrain: TaskSet::new(pretrain, pretrain_descriptor)?,
    })
}

impl SyntheticData {
    /// Ground-truth regime per task id, train and test together.
    pub fn regimes(&self) -> Vec<(u64, usize)> {
        let mut out: Vec<(u64, usize)> = self
            .train
            .tasks
            .iter()
            .chain(&self.test.tasks)
            .filter_map(|t| t.regime_id.map(|r| (t.task_id, r)))
            .collect();
        out.sort_unstable();
        out
    }
}
