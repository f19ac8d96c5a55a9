use serde::{Deserialize, Serialize};

use super::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    /// 0.99 rather than the more common 0.999.
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for a fixed group of parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    params: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore, params: Vec<ParamId>) -> Self {
        let m: Vec<Vec<f64>> = params.iter().map(|&id| vec![0.0; store.value(id).len()]).collect();
        Self {
            config,
            v: m.clone(),
            m,
            params,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    /// One bias-corrected Adam update of every tracked parameter.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for &id in &self.params {
            match store.grad(id) {
                None => return Err(Error::MissingGrad(store.name(id).to_string())),
                Some(g) if g.len() != store.value(id).len() => {
                    return Err(Error::shape("adam_step", format!("gradient of `{}` has wrong size", store.name(id))))
                }
                Some(_) => {}
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, &id) in self.params.iter().enumerate() {
            let g = store.grad(id).expect("checked above").data().to_vec();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let p = store.value_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one update of `state` to `store`.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    state.step(store)
}
