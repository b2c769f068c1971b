//! Adam optimizer with bias correction and exponential learning-rate
//! decay across epochs.

use crate::autodiff::{Grads, Graph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// Adam hyperparameters. The learning rate passed to [`Adam::step`] is the
/// already-decayed effective rate; see [`effective_lr`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-epoch exponential decay: `base * decay^epoch` (epoch counted from 0).
pub fn effective_lr(base: f64, decay: f64, epoch: usize) -> f64 {
    base * decay.powi(epoch as i32)
}

/// Adam state: step counter plus first/second moment estimates per
/// parameter, created lazily on first update.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    t: u64,
    m: IndexMap<String, Tensor>,
    v: IndexMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0, m: IndexMap::new(), v: IndexMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update to every parameter present in `grads`. Rejects
    /// non-finite gradients so a divergence is reported instead of
    /// silently corrupting the moment estimates.
    pub fn step(&mut self, graph: &mut Graph, grads: &Grads, lr: f64) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient for parameter {name:?} contains non-finite values"
                )));
            }
        }
        self.t += 1;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (name, g) in grads {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for (mv, &gv) in m.data_mut().iter_mut().zip(g.data()) {
                *mv = b1 * *mv + (1.0 - b1) * gv;
            }
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for (vv, &gv) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            }
            let m = &self.m[name];
            let v = &self.v[name];
            let mut p = graph.param_value(name)?.clone();
            for ((pv, &mv), &vv) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let m_hat = mv / bc1;
                let v_hat = vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + self.config.eps);
            }
            graph.set_param(name, p)?;
        }
        Ok(())
    }
}
