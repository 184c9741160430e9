//! AdamW with decoupled weight decay and a linear learning-rate warmup.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Zero disables warmup.
    pub warmup_steps: u64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 2000,
        }
    }
}

impl AdamWConfig {
    /// Learning rate used by the `step`-th update (1-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * (step as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub lr: f64,
}

impl AdamWState {
    pub fn new(config: AdamWConfig, params: &[&Tensor]) -> Self {
        AdamWState {
            config,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. A non-finite gradient leaves params and state untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<StepReport> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::input(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::input(format!("shape mismatch at parameter {i}")));
            }
            if !g.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite gradient at parameter {i}; step {} skipped",
                    self.step + 1
                )));
            }
        }
        let step = self.step + 1;
        let c = &self.config;
        let lr = c.lr_at(step);
        if lr < 0.0 {
            return Err(Error::input("negative learning rate"));
        }
        let bc1 = 1.0 - c.beta1.powi(step as i32);
        let bc2 = 1.0 - c.beta2.powi(step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pv = p.values_mut();
            for k in 0..pv.len() {
                let gk = g.values()[k];
                let mk = &mut m.values_mut()[k];
                *mk = c.beta1 * *mk + (1.0 - c.beta1) * gk;
                let vk = &mut v.values_mut()[k];
                *vk = c.beta2 * *vk + (1.0 - c.beta2) * gk * gk;
                let m_hat = m.values()[k] / bc1;
                let v_hat = v.values()[k] / bc2;
                pv[k] -= lr * c.weight_decay * pv[k];
                pv[k] -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        self.step = step;
        Ok(StepReport { step, lr })
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sq_norm()).sum::<f64>().sqrt();
    if norm.is_finite() && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.values_mut() {
                *v *= s;
            }
        }
    }
    norm
}
