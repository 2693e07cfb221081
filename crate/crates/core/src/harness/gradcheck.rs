use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{grad_check, Architecture, ModelObjective, Objective, PredictiveModel};
use crate::error::Result;
use crate::seed::derive_seed;

pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckCase {
    pub hidden: usize,
    pub seq_len: usize,
    pub n_features: usize,
    pub n_params: usize,
    pub max_relative_error: f64,
    /// Entries above the relative tolerance.
    pub flagged: usize,
    /// Flagged entries whose absolute error exceeds the rounding error
    /// `4·ε·|L|/h` of the central difference.
    pub beyond_rounding: usize,
}

/// Central-difference check of the full model on `configs` random shapes
/// (H ∈ [2, 8], T ∈ [2, 10], F ∈ [1, 19]) with batches of 8 windows.
pub fn grad_check_suite(configs: usize, seed: u64) -> Result<Vec<GradCheckCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(configs);
    for case in 0..configs as u64 {
        let hidden = rng.random_range(2..=8);
        let seq_len = rng.random_range(2..=10);
        let n_features = rng.random_range(1..=19);
        let arch = Architecture::with_default_head(n_features, seq_len, hidden)?;
        let model = PredictiveModel::init(arch.clone(), derive_seed(seed, "grad-check", case))?;
        let windows: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..arch.window_len()).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let labels: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let objective = ModelObjective {
            model: &model,
            windows: windows.iter().map(|w| w.as_slice()).collect(),
            labels: &labels,
        };
        let report = grad_check(&objective, model.params(), GRAD_CHECK_STEP, GRAD_CHECK_TOLERANCE)?;
        let rounding = 4.0 * f64::EPSILON * objective.loss(model.params())?.abs() / GRAD_CHECK_STEP;
        let flagged: Vec<_> = report
            .entries
            .iter()
            .filter(|e| !(e.relative_error <= GRAD_CHECK_TOLERANCE))
            .collect();
        out.push(GradCheckCase {
            hidden,
            seq_len,
            n_features,
            n_params: model.param_count(),
            max_relative_error: report.max_relative_error(),
            flagged: flagged.len(),
            beyond_rounding: flagged
                .iter()
                .filter(|e| !((e.analytic - e.numeric).abs() <= rounding))
                .count(),
        });
    }
    Ok(out)
}
