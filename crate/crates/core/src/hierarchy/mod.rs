//! Easy-to-hard task hierarchy: variance-minimizing threshold selection,
//! layer-by-layer training, and test-time routing.

mod io;
mod route;
mod train;

use serde::{Deserialize, Serialize};

use crate::autodiff::PredictiveModel;
use crate::error::{Error, Result};
use crate::metalearn::MetaConfig;

pub use io::{decode_hierarchy, encode_hierarchy, load_hierarchy, save_hierarchy, HIERARCHY_FORMAT_VERSION};
pub use route::{evaluate_adaptive, route, routing_split, RouteDecision, RoutedEvaluation};
pub use train::{train_adaptive, AdaptiveOutcome, PartitionRecord};

/// Search window `[⌊aN⌋, ⌊bN⌋)` for the split index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaBounds {
    pub a: f64,
    pub b: f64,
}

impl Default for GammaBounds {
    fn default() -> Self {
        Self { a: 0.35, b: 0.65 }
    }
}

impl GammaBounds {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let bounds = Self { a, b };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.a) || !(self.b > self.a && self.b <= 1.0) {
            return Err(Error::config(
                "hierarchy.bounds",
                format!("need 0 ≤ a < b ≤ 1, got a = {}, b = {}", self.a, self.b),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub gamma: f64,
    /// Index into the ascending-sorted values.
    pub split_index: usize,
    /// `V_k` for every `k` in `[0, N)`.
    pub variance_profile: Vec<f64>,
    /// Input positions with value `< γ`.
    pub hard: Vec<usize>,
    pub easy: Vec<usize>,
    /// The bounds gave an empty window and the full range was searched.
    pub widened: bool,
}

/// Population variance, 0 for empty and singleton slices.
pub(crate) fn population_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Ranks the values, picks the split `k*` minimizing
/// `Var(sorted[..k]) + Var(sorted[k..])` inside the bounds window (ties to the
/// smallest `k`), and sets `γ = sorted[k*]`.
///
/// −∞ entries are clamped to one below the smallest finite value.
pub fn select_threshold(values: &[f64], bounds: GammaBounds) -> Result<SplitResult> {
    bounds.validate()?;
    let n = values.len();
    if n < 2 {
        return Err(Error::Argument(format!("threshold selection needs at least 2 values, got {n}")));
    }
    if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Argument("threshold selection got NaN or +∞".into()));
    }
    let floor = values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor - 1.0 } else { -1.0 };
    let clamped: Vec<f64> = values.iter().map(|&v| if v.is_finite() { v } else { floor }).collect();
    let mut sorted = clamped.clone();
    sorted.sort_by(f64::total_cmp);

    let variance_profile: Vec<f64> = (0..n)
        .map(|k| population_variance(&sorted[..k]) + population_variance(&sorted[k..]))
        .collect();

    let mut lo = (bounds.a * n as f64).floor() as usize;
    let mut hi = ((bounds.b * n as f64).floor() as usize).min(n);
    let widened = lo >= hi;
    if widened {
        log::warn!("empty threshold window [{lo}, {hi}) for N = {n}; searching the full range");
        lo = 0;
        hi = n;
    }
    let mut split_index = lo;
    for k in lo + 1..hi {
        if variance_profile[k] < variance_profile[split_index] {
            split_index = k;
        }
    }
    let gamma = sorted[split_index];
    let (hard, easy): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| categorize(clamped[i], gamma) == Category::Hard);
    Ok(SplitResult {
        gamma,
        split_index,
        variance_profile,
        hard,
        easy,
        widened,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Easy,
    Hard,
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Category::Easy => "easy",
            Category::Hard => "hard",
        })
    }
}

/// Hard iff `r2 < γ`.
pub fn categorize(r2: f64, gamma: f64) -> Category {
    if r2 < gamma {
        Category::Hard
    } else {
        Category::Easy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Every outer epoch starts from the pretrained model.
    A,
    /// Every outer epoch after the first starts from the previous epoch's hard model.
    B,
}

impl Variant {
    pub fn default_inner_epochs(self) -> usize {
        match self {
            Variant::A => 3,
            Variant::B => 1,
        }
    }
}

/// Which split of a test task decides its route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouteOn {
    /// Adapt on the full support set, score on the query set.
    #[default]
    Query,
    /// Adapt on the first 80% of the support set, score on the rest.
    SupportHoldout,
}

impl std::fmt::Display for RouteOn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RouteOn::Query => "query",
            RouteOn::SupportHoldout => "support-holdout",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyConfig {
    pub max_splits: usize,
    pub variant: Variant,
    pub bounds: GammaBounds,
    pub route_on: RouteOn,
    pub meta: MetaConfig,
}

impl HierarchyConfig {
    /// Paper defaults for `variant`, including its inner-epoch count.
    pub fn new(variant: Variant, meta: MetaConfig) -> Self {
        Self {
            max_splits: 3,
            variant,
            bounds: GammaBounds::default(),
            route_on: RouteOn::Query,
            meta: MetaConfig {
                inner_epochs: variant.default_inner_epochs(),
                ..meta
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_splits == 0 {
            return Err(Error::config("hierarchy.max_splits", "must be at least 1"));
        }
        self.bounds.validate()?;
        self.meta.validate()
    }
}

/// One layer of the comb-shaped hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitNode<M = PredictiveModel> {
    pub layer: usize,
    /// Final-epoch threshold used for routing.
    pub gamma: f64,
    /// Meta-model trained on this layer's full task set, before the split.
    pub layer_model: M,
    /// E-r: continued on the easy tasks.
    pub easy_model: M,
    pub easy_ids: Vec<u64>,
    pub hard_ids: Vec<u64>,
    pub child: Option<Box<SplitNode<M>>>,
    /// H-u, present only at the deepest node.
    pub hard_model: Option<M>,
}

impl<M> SplitNode<M> {
    /// Nodes from the root down.
    pub fn chain(&self) -> Vec<&SplitNode<M>> {
        let mut out = vec![self];
        let mut node = self;
        while let Some(child) = &node.child {
            out.push(child);
            node = child;
        }
        out
    }
}

/// `(epoch, layer) → γ`, one row per trained layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub epoch: usize,
    pub layer: usize,
    pub gamma: f64,
    pub n_tasks: usize,
    pub n_hard: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskHierarchy<M = PredictiveModel> {
    pub initial_model: M,
    pub root: SplitNode<M>,
    pub threshold_log: Vec<ThresholdEntry>,
    pub route_on: RouteOn,
}

impl<M> TaskHierarchy<M> {
    pub fn depth(&self) -> usize {
        self.root.chain().len()
    }

    /// Checks the comb shape: layers 1, 2, …, one hard model at the deepest node.
    pub fn validate(&self, max_splits: usize) -> Result<()> {
        let chain = self.root.chain();
        if chain.len() > max_splits {
            return Err(Error::Contract(format!(
                "hierarchy depth {} exceeds max_splits {max_splits}",
                chain.len()
            )));
        }
        for (i, node) in chain.iter().enumerate() {
            if node.layer != i + 1 {
                return Err(Error::Contract(format!("node {i} has layer {}", node.layer)));
            }
            let deepest = i + 1 == chain.len();
            if node.hard_model.is_some() != deepest {
                return Err(Error::Contract(format!("hard model misplaced at layer {}", node.layer)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bounds(a: f64, b: f64) -> GammaBounds {
        GammaBounds::new(a, b).unwrap()
    }

    #[test]
    fn two_point_case() {
        let s = select_threshold(&[0.3, 0.9], bounds(0.0, 1.0)).unwrap();
        assert_eq!(s.split_index, 1);
        assert_eq!(s.gamma, 0.9);
        assert_eq!(s.hard, vec![0]);
        assert_eq!(s.easy, vec![1]);
        assert!((s.variance_profile[0] - 0.09).abs() < 1e-15);
        assert_eq!(s.variance_profile[1], 0.0);
    }

    #[test]
    fn equal_values_give_empty_hard_set() {
        let s = select_threshold(&[0.4; 5], bounds(0.0, 1.0)).unwrap();
        assert_eq!(s.split_index, 0);
        assert_eq!(s.gamma, 0.4);
        assert!(s.hard.is_empty());
    }

    #[test]
    fn worked_example() {
        let r2 = [0.1, 0.15, 0.2, 0.7, 0.75, 0.8];
        let s = select_threshold(&r2, bounds(0.2, 0.8)).unwrap();
        assert!((s.variance_profile[1] - 0.0806).abs() < 1e-4);
        assert!((s.variance_profile[2] - 0.0586).abs() < 1e-4);
        assert!((s.variance_profile[3] - 0.00333).abs() < 1e-5);
        assert_eq!(s.split_index, 3);
        assert_eq!(s.gamma, 0.7);
        assert_eq!(s.hard, vec![0, 1, 2]);
    }

    #[test]
    fn unsorted_input_keeps_positions() {
        let s = select_threshold(&[0.8, 0.1, 0.75, 0.15, 0.7, 0.2], bounds(0.2, 0.8)).unwrap();
        assert_eq!(s.hard, vec![1, 3, 5]);
        assert_eq!(s.easy, vec![0, 2, 4]);
    }

    #[test]
    fn empty_window_widens() {
        let s = select_threshold(&[0.3, 0.9], bounds(0.35, 0.45)).unwrap();
        assert!(s.widened);
        assert_eq!(s.gamma, 0.9);
    }

    #[test]
    fn negative_infinity_is_clamped_and_hard() {
        let s = select_threshold(&[f64::NEG_INFINITY, 0.5, 0.6, 0.9], bounds(0.0, 1.0)).unwrap();
        assert!(s.variance_profile.iter().all(|v| v.is_finite()));
        assert!(s.hard.contains(&0));
    }

    #[test]
    fn rejects_short_or_nan_input() {
        assert!(select_threshold(&[0.5], GammaBounds::default()).is_err());
        assert!(select_threshold(&[0.5, f64::NAN], GammaBounds::default()).is_err());
        assert!(GammaBounds::new(0.7, 0.3).is_err());
    }

    #[test]
    fn categorize_is_strict() {
        assert_eq!(categorize(0.5, 0.6), Category::Hard);
        assert_eq!(categorize(0.6, 0.6), Category::Easy);
        assert_eq!(categorize(-0.3, 0.1), Category::Hard);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(values in prop::collection::vec(-2.0f64..1.0, 2..80)) {
            let s = select_threshold(&values, GammaBounds::default()).unwrap();
            let mut all: Vec<usize> = s.hard.iter().chain(&s.easy).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..values.len()).collect::<Vec<_>>());
            for &i in &s.hard {
                prop_assert!(values[i] < s.gamma);
            }
            for &i in &s.easy {
                prop_assert!(values[i] >= s.gamma);
            }
        }
    }
}
