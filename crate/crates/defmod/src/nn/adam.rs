//! Bias-corrected Adam with a shared step counter and global-norm clipping.

use crate::error::{Error, Result};
use crate::nn::tensor::Parameterized;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "adam betas must be in [0, 1): got {}, {}",
                self.beta1, self.beta2
            )));
        }
        if self.eps <= 0.0 {
            return Err(Error::Config(format!("adam eps must be > 0: got {}", self.eps)));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("adam lr must be > 0: got {}", self.lr)));
        }
        Ok(())
    }
}

/// One Adam update over every tensor of `model`. Gradients are cleared after
/// the step. Rejects non-finite gradients, naming the offending tensor.
pub fn adam_step(model: &mut impl Parameterized, cfg: &mut AdamConfig) -> Result<()> {
    cfg.step += 1;
    let t = cfg.step;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for tensor in model.tensors_mut() {
        let name = tensor.name().to_string();
        let (values, grad, m, v) = tensor.buffers_mut();
        for k in 0..values.len() {
            let g = grad[k];
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of tensor {name}")));
            }
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            values[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            if !values[k].is_finite() {
                return Err(Error::NonFinite(format!("tensor {name} after adam update")));
            }
        }
        tensor.zero_grad();
    }
    Ok(())
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(model: &mut impl Parameterized, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for t in model.tensors() {
        for g in t.grad() {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for t in model.tensors_mut() {
            for g in t.grad_mut() {
                *g *= scale;
            }
        }
    }
    norm
}
