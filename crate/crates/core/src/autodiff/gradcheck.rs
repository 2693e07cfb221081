use super::model::{mse_loss, PredictiveModel};
use crate::error::Result;

/// Scalar function of a parameter vector with an analytic gradient.
pub trait Objective {
    fn loss(&self, params: &[f64]) -> Result<f64>;
    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>>;
}

/// MSE of a [`PredictiveModel`] on a fixed batch.
pub struct ModelObjective<'a> {
    pub model: &'a PredictiveModel,
    pub windows: Vec<&'a [f64]>,
    pub labels: &'a [f64],
}

impl Objective for ModelObjective<'_> {
    fn loss(&self, params: &[f64]) -> Result<f64> {
        let model = self.model.with_params(params.to_vec())?;
        mse_loss(&model.predict(&self.windows)?, self.labels)
    }

    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>> {
        let model = self.model.with_params(params.to_vec())?;
        Ok(model.loss_and_gradient(&self.windows, self.labels)?.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.entries.iter().map(|e| e.relative_error).fold(0.0, f64::max)
    }

    /// Indices whose relative error exceeds the tolerance.
    pub fn flagged(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| !(e.relative_error <= self.tolerance))
            .map(|e| e.index)
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.flagged().is_empty()
    }
}

/// Compares the analytic gradient with central differences
/// `(L(θ+h) − L(θ−h)) / 2h`, relative to `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(objective: &dyn Objective, params: &[f64], step: f64, tol: f64) -> Result<GradCheckReport> {
    let analytic = objective.gradient(params)?;
    let mut probe = params.to_vec();
    let mut entries = Vec::with_capacity(params.len());
    for (j, &a) in analytic.iter().enumerate() {
        let orig = probe[j];
        probe[j] = orig + step;
        let plus = objective.loss(&probe)?;
        probe[j] = orig - step;
        let minus = objective.loss(&probe)?;
        probe[j] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        entries.push(GradCheckEntry {
            index: j,
            analytic: a,
            numeric,
            relative_error: (a - numeric).abs() / denom,
        });
    }
    Ok(GradCheckReport {
        entries,
        tolerance: tol,
    })
}
