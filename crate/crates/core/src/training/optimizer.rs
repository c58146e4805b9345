//! Adam and AdamW with bias correction. AdamW applies decoupled weight decay
//! to entries flagged `decay` in the store (weight matrices), never to
//! biases or norm gains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    AdamW,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, store: &ParamStore) -> Self {
        Optimizer {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            t: 0,
            m: store.iter().map(|(_, e)| vec![0.0; e.tensor.numel()]).collect(),
            v: store.iter().map(|(_, e)| vec![0.0; e.tensor.numel()]).collect(),
        }
    }

    pub fn with_weight_decay(mut self, decay: f64) -> Self {
        self.weight_decay = decay;
        self
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update from the gradients currently stored on the parameters.
    /// Every parameter must carry a gradient.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let decay_this = store.entry(id).decay;
            let grads = store.get(id).grad.clone().ok_or_else(|| {
                Error::Training(format!(
                    "optimizer step without gradient for {}",
                    store.entry(id).name
                ))
            })?;
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { op: "optimizer_step" });
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let decay_factor = if self.kind == OptimizerKind::AdamW && decay_this {
                lr * self.weight_decay
            } else {
                0.0
            };
            store.get_mut(id).apply_update(|i, w| {
                let gi = grads[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.epsilon) + decay_factor * *w;
            });
        }
        Ok(())
    }
}
