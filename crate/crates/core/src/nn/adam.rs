use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::math;

/// Adam hyperparameters. Weight decay is added to the gradient (L2 form),
/// so it also passes through the moment estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.002, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 1e-5 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if ok { Ok(()) } else { Err(Error::Config(alloc::format!("invalid optimizer settings {self:?}"))) }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update using the gradients accumulated in `store`.
    /// Parameters without a gradient still receive weight decay.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - math::powi(c.beta1, self.step as i32);
        let bc2 = 1.0 - math::powi(c.beta2, self.step as i32);
        for (i, p) in store.iter_mut().enumerate() {
            let m = self.m[i].values_mut();
            let v = self.v[i].values_mut();
            let grad = p.grad.as_ref().map(|g| g.values());
            for (j, theta) in p.value.values_mut().iter_mut().enumerate() {
                let g = grad.map_or(0.0, |g| g[j]) + c.weight_decay * *theta;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *theta -= c.learning_rate * m_hat / (math::sqrt(v_hat) + c.epsilon);
            }
        }
    }
}
