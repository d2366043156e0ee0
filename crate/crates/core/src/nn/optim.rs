use serde::{Deserialize, Serialize};

use super::params::{tensors, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers follow the parameter visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update, `grads` having the same structure as `params`.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = tensors(grads);
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        if grads.len() != self.m.len() {
            return Err(Error::Shape("optimizer state does not match the parameter set".into()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut i = 0;
        let mut bad = false;
        params.visit_mut("", &mut |_, t| {
            let g = grads[i].data();
            if g.len() != t.len() {
                bad = true;
                return;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, w) in t.data_mut().iter_mut().enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                *w -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
            }
            i += 1;
        });
        if bad {
            return Err(Error::Shape("gradient shape differs from parameter shape".into()));
        }
        Ok(())
    }
}
