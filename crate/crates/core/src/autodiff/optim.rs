use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(params: &[f64], gradient: &[f64]) -> Result<()> {
    if params.len() != gradient.len() {
        return Err(Error::Argument(format!(
            "parameter length {} but gradient length {}",
            params.len(),
            gradient.len()
        )));
    }
    Ok(())
}

/// `params − lr · gradient`.
pub fn sgd_step(params: &[f64], gradient: &[f64], lr: f64) -> Result<Vec<f64>> {
    check_lengths(params, gradient)?;
    if lr < 0.0 {
        return Err(Error::Argument(format!("negative learning rate {lr}")));
    }
    Ok(params.iter().zip(gradient).map(|(p, g)| p - lr * g).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn apply(&mut self, params: &mut [f64], gradient: &[f64], lr: f64) -> Result<()> {
        check_lengths(params, gradient)?;
        if self.m.len() != params.len() {
            return Err(Error::Argument(format!(
                "adam state sized for {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = gradient[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Bias-corrected Adam update; returns the new parameters and advanced state.
pub fn adam_step(state: &AdamState, params: &[f64], gradient: &[f64], lr: f64) -> Result<(Vec<f64>, AdamState)> {
    let mut next = state.clone();
    let mut out = params.to_vec();
    next.apply(&mut out, gradient, lr)?;
    Ok((out, next))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OptimizerState {
    Sgd,
    Adam(AdamState),
}

impl OptimizerState {
    pub fn adam(len: usize) -> Self {
        OptimizerState::Adam(AdamState::new(len))
    }

    /// In-place update of `params`.
    pub fn step(&mut self, params: &mut [f64], gradient: &[f64], lr: f64) -> Result<()> {
        match self {
            OptimizerState::Sgd => {
                let next = sgd_step(params, gradient, lr)?;
                params.copy_from_slice(&next);
                Ok(())
            }
            OptimizerState::Adam(state) => state.apply(params, gradient, lr),
        }
    }
}
