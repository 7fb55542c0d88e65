//! Gradient clipping and the Adadelta update rule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Parameter name → gradient.
pub type GradMap = BTreeMap<String, Tensor>;

/// Global L2 norm over every tensor in the map.
pub fn global_norm(grads: &GradMap) -> f64 {
    grads.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescales all gradients by `max_norm / g` when the global norm `g` exceeds
/// `max_norm`. Returns the norm measured before clipping.
pub fn clip_global_norm(grads: &mut GradMap, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Contract(format!("max_norm must be positive, got {max_norm}")));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            g.map_in_place(|v| v * scale);
        }
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
    pub lr: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self {
            rho: 0.95,
            epsilon: 1e-8,
            lr: 1.0,
        }
    }
}

impl AdadeltaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("adadelta.rho must lie in (0,1), got {}", self.rho)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("adadelta.epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("adadelta.lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Running averages of squared gradients and squared updates, per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdadeltaState {
    pub sq_grad: BTreeMap<String, Tensor>,
    pub sq_update: BTreeMap<String, Tensor>,
}

#[derive(Clone, Debug)]
pub struct Adadelta {
    pub config: AdadeltaConfig,
    pub state: AdadeltaState,
}

impl Adadelta {
    pub fn new(config: AdadeltaConfig) -> Self {
        Self {
            config,
            state: AdadeltaState::default(),
        }
    }

    /// One update over every parameter in `params`. Parameters absent from
    /// `grads` are treated as having a zero gradient.
    ///
    /// ```text
    /// E[g²] ← ρ E[g²] + (1−ρ) g²
    /// Δ     = −√(E[Δ²] + ε) / √(E[g²] + ε) · g
    /// E[Δ²] ← ρ E[Δ²] + (1−ρ) Δ²
    /// θ     ← θ + lr · Δ
    /// ```
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor>, grads: &GradMap) -> Result<()> {
        let AdadeltaConfig { rho, epsilon, lr } = self.config;
        for (name, grad) in grads {
            match params.get(name) {
                None => return Err(Error::Contract(format!("gradient for unknown parameter {name}"))),
                Some(p) if p.shape() != grad.shape() => {
                    return Err(Error::Contract(format!(
                        "gradient for {name} has shape {:?}, parameter has {:?}",
                        grad.shape(),
                        p.shape()
                    )))
                }
                _ => {}
            }
        }
        for (name, param) in params.iter_mut() {
            let sq_grad = self
                .state
                .sq_grad
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(param.shape()));
            let sq_update = self
                .state
                .sq_update
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(param.shape()));
            if sq_grad.shape() != param.shape() || sq_update.shape() != param.shape() {
                return Err(Error::Contract(format!("optimizer state for {name} does not match its shape")));
            }
            let grad = grads.get(name);
            let p = param.data_mut();
            let eg = sq_grad.data_mut();
            let ed = sq_update.data_mut();
            for i in 0..p.len() {
                let g = grad.map_or(0.0, |g| g.data()[i]);
                eg[i] = rho * eg[i] + (1.0 - rho) * g * g;
                let delta = -((ed[i] + epsilon).sqrt() / (eg[i] + epsilon).sqrt()) * g;
                ed[i] = rho * ed[i] + (1.0 - rho) * delta * delta;
                p[i] += lr * delta;
            }
        }
        Ok(())
    }
}
