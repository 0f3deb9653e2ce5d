//! Adam optimizer over a flat list of parameter tensors.
//!
//! State vectors are aligned with the canonical parameter visit order;
//! the trainer collects gradients from the tape in that same order.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// First/second moment estimates plus the bias-correction step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    /// Zero-initialized state matching the given parameter shapes.
    pub fn new(cfg: AdamConfig, params: &[&Tensor]) -> Self {
        let m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { cfg, m, v, step: 0 }
    }

    /// One update: standard first/second-moment rule with bias correction.
    /// `params` and `grads` must align with the state vectors.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(CoreError::State(format!(
                "adam state holds {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - math::powf(self.cfg.beta1, t);
        let bc2 = 1.0 - math::powf(self.cfg.beta2, t);
        for idx in 0..params.len() {
            let p = &mut *params[idx];
            let g = &grads[idx];
            if g.len() != p.numel() {
                return Err(CoreError::State(format!(
                    "grad {idx} has {} elements, param has {}",
                    g.len(),
                    p.numel()
                )));
            }
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let pd = p.data_mut();
            for i in 0..pd.len() {
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * g[i];
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                pd[i] -= lr * m_hat / (math::sqrt(v_hat) + self.cfg.eps);
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.iter() {
        for v in g {
            sq += v * v;
        }
    }
    let norm = math::sqrt(sq);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    norm
}
