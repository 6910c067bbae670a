use std::collections::BTreeMap;

use super::config::OptimizerConfig;
use crate::autodiff::{ParamGrads, ParamId, ParamStore};
use crate::matrix::Matrix;

/// Cosine decay from `lr` at step 0 to `lr_min` at `total_steps − 1`.
pub fn cosine_lr(cfg: &OptimizerConfig, step: usize, total_steps: usize) -> f64 {
    if total_steps <= 1 {
        return cfg.lr;
    }
    let t = step.min(total_steps - 1) as f64 / (total_steps - 1) as f64;
    cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Global Euclidean norm of a gradient set.
pub fn grad_norm(grads: &ParamGrads) -> f64 {
    grads
        .values()
        .map(|g| g.as_slice().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: OptimizerConfig,
    moments: BTreeMap<ParamId, (Matrix, Matrix)>,
    steps: u64,
}

impl Adam {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Self {
            cfg,
            moments: BTreeMap::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update with learning rate `lr`. Parameters without an
    /// entry in `grads` are treated as having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        self.steps += 1;
        let [b1, b2] = self.cfg.betas;
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        let clip = match self.cfg.grad_clip {
            Some(max) => {
                let n = grad_norm(grads);
                if n > max {
                    max / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let value = store.value(id);
            let (rows, cols) = value.shape();
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (Matrix::zeros(rows, cols), Matrix::zeros(rows, cols)));
            let mut next = (**value).clone();
            let g = grads.get(&id);
            let decay = 1.0 - lr * self.cfg.weight_decay;
            for k in 0..next.len() {
                let gk = g.map_or(0.0, |g| g.as_slice()[k]) * clip;
                let mk = &mut m.as_mut_slice()[k];
                *mk = b1 * *mk + (1.0 - b1) * gk;
                let vk = &mut v.as_mut_slice()[k];
                *vk = b2 * *vk + (1.0 - b2) * gk * gk;
                let mhat = m.as_slice()[k] / c1;
                let vhat = v.as_slice()[k] / c2;
                let x = &mut next.as_mut_slice()[k];
                *x = *x * decay - lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
            store.set_value(id, next);
        }
    }
}
