//! Adam with optional global-norm clipping, on flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::CMatrix;
use crate::pcfd::EpcfdParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the gradient to this global norm when it is larger.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    /// `beta1 = 0`, `beta2 = 0.9`, clipping at 10.
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
            clip_norm: Some(10.0),
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(0.001)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub config: AdamConfig,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl OptimState {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first: vec![0.0; n],
            second: vec![0.0; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// One descent step `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.len() || grads.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient at index {i}: {}",
                grads[i]
            )));
        }
        let c = self.config;
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = match c.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i] * scale;
            self.first[i] = c.beta1 * self.first[i] + (1.0 - c.beta1) * g;
            self.second[i] = c.beta2 * self.second[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.first[i] / bc1;
            let v_hat = self.second[i] / bc2;
            params[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
        }
        Ok(())
    }
}

/// Adam on every block of `params`, followed by projection onto u(m).
/// `ascend` flips the sign so the step increases the loss.
pub fn adam_step(
    params: &mut EpcfdParams,
    grads: &[Vec<CMatrix>],
    state: &mut OptimState,
    ascend: bool,
) -> Result<()> {
    let mut g = EpcfdParams::flatten_grad(grads);
    if ascend {
        g.iter_mut().for_each(|v| *v = -*v);
    }
    let mut flat = params.flat();
    state.step(&mut flat, &g)?;
    params.set_flat(&flat)
}

/// Learning rate after `decay^(floor(iter / every))`.
pub fn decayed_lr(base: f64, decay: f64, every: usize, iter: usize) -> f64 {
    if every == 0 {
        return base;
    }
    base * decay.powi((iter / every) as i32)
}
