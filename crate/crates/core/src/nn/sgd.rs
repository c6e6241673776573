use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::groups::GroupSet;
use super::model::{Model, ParamRef};
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 32,
            epochs: 20,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..1.0).contains(&self.momentum),
            "momentum must be in [0, 1), got {}",
            self.momentum
        );
        ensure!(self.weight_decay >= 0.0, "weight decay must be >= 0");
        ensure!(self.batch_size > 0, "batch size must be positive");
        ensure!(self.epochs > 0, "epochs must be positive");
        Ok(())
    }
}

/// SGD with heavy-ball momentum: `v ← μv + g`, `p ← p − lr·(v + λp)`.
///
/// Momentum buffers live as long as the optimizer; create a new one per task.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    buffers: HashMap<ParamRef, Vec<f64>>,
}

impl Sgd {
    pub fn new(cfg: &SgdConfig) -> Self {
        Self {
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            buffers: HashMap::new(),
        }
    }

    /// Updates one raw parameter buffer, keyed by `key` for momentum state.
    pub fn update(&mut self, key: ParamRef, param: &mut [f64], grad: &[f64], lr: f64) {
        let buf = self
            .buffers
            .entry(key)
            .or_insert_with(|| vec![0.0; grad.len()]);
        let (mu, wd) = (self.momentum, self.weight_decay);
        for ((w, v), d) in param.iter_mut().zip(buf.iter_mut()).zip(grad) {
            *v = mu * *v + d;
            *w -= lr * (*v + wd * *w);
        }
    }

    /// Applies one update from the gradients accumulated on the model's
    /// tensors. Frozen groups (lr = 0) are skipped entirely.
    pub fn step(&mut self, model: &mut Model, groups: &GroupSet) -> Result<()> {
        for g in &groups.groups {
            if g.lr == 0.0 {
                continue;
            }
            for &p in &g.members {
                let t = model
                    .param_mut(p)
                    .ok_or_else(|| Error::contract(format!("group member {p} missing")))?;
                let Some(grad) = t.grad().map(<[f64]>::to_vec) else {
                    continue;
                };
                ensure!(
                    grad.len() == t.len(),
                    "gradient for {p} has {} entries, parameter has {}",
                    grad.len(),
                    t.len()
                );
                self.update(p, t.data_mut(), &grad, g.lr);
            }
        }
        Ok(())
    }
}
