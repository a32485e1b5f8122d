use std::f64::consts::PI;

use advlab_tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nets::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Half-cosine from the base rate down to `min_lr` over the run.
    Cosine,
}

/// Learning rate before update `step` (0-based) of `total`.
pub fn learning_rate(schedule: Schedule, base: f64, min_lr: f64, step: usize, total: usize) -> f64 {
    match schedule {
        Schedule::Constant => base,
        Schedule::Cosine => {
            if total == 0 {
                return base;
            }
            let t = step.min(total) as f64 / total as f64;
            min_lr + 0.5 * (base - min_lr) * (1.0 + (PI * t).cos())
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub config: OptimizerConfig,
    /// Updates taken so far.
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: OptimizerConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update of every parameter with its gradient at rate `lr`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(invalid(
                "optimizer",
                format!("{} gradients and {} moments for {} parameters", grads.len(), self.m.len(), params.len()),
            ));
        }
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let decay = T::lit(1.0 - lr * c.weight_decay);
        let (lr, eps) = (T::lit(lr), T::lit(c.eps));
        for (i, theta) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in theta.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w = *w * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: Option<f64>) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| {
            let v = v.to_f64_lossless();
            v * v
        })
        .sum::<f64>()
        .sqrt();
    if let Some(c) = max_norm {
        if norm > c {
            let s = T::lit(c / norm);
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}
