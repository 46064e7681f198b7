use alloc::format;

use serde::{Deserialize, Serialize};

use super::ParameterStore;
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer; moments live in the [`ParameterStore`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Adam {
    pub config: AdamConfig,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    ///
    /// Refuses to touch any parameter if some gradient is non-finite.
    pub fn step(&self, store: &mut ParameterStore, lr: f64) -> Result<()> {
        for p in store.iter_mut() {
            if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    name: p.name.clone(),
                    detail: format!("gradient entry {i} is {}", p.grad[i]),
                });
            }
        }
        store.step += 1;
        let t = store.step as i32;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - math::powi(beta1, t);
        let bc2 = 1.0 - math::powi(beta2, t);
        for p in store.iter_mut() {
            if p.frozen {
                p.grad.iter_mut().for_each(|g| *g = 0.0);
                continue;
            }
            let data = p.value.data_mut();
            for i in 0..data.len() {
                let g = p.grad[i];
                p.m[i] = beta1 * p.m[i] + (1.0 - beta1) * g;
                p.v[i] = beta2 * p.v[i] + (1.0 - beta2) * g * g;
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                data[i] -= lr * mhat / (math::sqrt(vhat) + eps);
                p.grad[i] = 0.0;
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm(store: &mut ParameterStore, max_norm: f64) -> f64 {
    let n = store.grad_norm();
    if n > max_norm && n.is_finite() {
        let s = max_norm / (n + 1e-12);
        for p in store.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }
    n
}
