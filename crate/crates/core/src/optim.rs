//! Adam with a per-epoch exponential learning-rate schedule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("gradient has length {got}, parameters have {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite gradient at indices {0:?}")]
    NonFinite(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub step: u64,
    pub epoch: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr0: f64,
    pub decay: f64,
    /// Optional max-norm clip applied to the raw gradient.
    pub clip: Option<f64>,
}

impl Adam {
    pub fn new(dim: usize, lr0: f64, decay: f64) -> Self {
        Adam {
            step: 0,
            epoch: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr0,
            decay,
            clip: None,
        }
    }

    pub fn with_clip(mut self, max_norm: f64) -> Self {
        self.clip = Some(max_norm);
        self
    }

    /// Learning rate at the current epoch: `lr0 · decay^epoch`.
    pub fn lr(&self) -> f64 {
        self.lr0 * self.decay.powf(self.epoch as f64)
    }

    pub fn decay_epoch(&mut self) {
        self.epoch += 1;
    }

    /// One bias-corrected Adam update of `theta` in place.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<(), OptimError> {
        if grad.len() != theta.len() || self.m.len() != theta.len() {
            return Err(OptimError::Dimension { expected: theta.len(), got: grad.len() });
        }
        let bad: Vec<usize> = grad.iter().enumerate().filter(|(_, g)| !g.is_finite()).map(|(i, _)| i).collect();
        if !bad.is_empty() {
            return Err(OptimError::NonFinite(bad));
        }
        let scale = match self.clip {
            Some(c) => {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = self.lr();
        for i in 0..theta.len() {
            let g = grad[i] * scale;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            theta[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}
