use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Adam with bias correction and global-norm clipping. Moment estimates are kept by
/// parameter name so they can be checkpointed alongside the parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub steps: u64,
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            steps: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter of `store` that has a gradient.
    /// Returns the pre-clipping global gradient norm.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore) -> Result<f64> {
        let mut sq = 0.0;
        let mut present = Vec::new();
        for (name, var) in store.vars() {
            if let Some(g) = grads.get(var.as_tensor()) {
                sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
                present.push((name, var, g));
            }
        }
        let norm = sq.sqrt();
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / (norm + 1e-6),
            _ => 1.0,
        };
        self.steps += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
        for (name, var, g) in present {
            let g = (g * scale)?;
            let m = match self.first.get(name) {
                Some(m) => ((m * c.beta1)? + (&g * (1.0 - c.beta1))?)?,
                None => (&g * (1.0 - c.beta1))?,
            };
            let v = match self.second.get(name) {
                Some(v) => ((v * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?,
                None => (g.sqr()? * (1.0 - c.beta2))?,
            };
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + c.eps)?)?;
            var.set(&(var.as_tensor() - (update * c.lr)?)?)?;
            self.first.insert(name.clone(), m.detach());
            self.second.insert(name.clone(), v.detach());
        }
        Ok(norm)
    }
}
