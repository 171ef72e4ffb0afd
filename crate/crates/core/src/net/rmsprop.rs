use serde::{Deserialize, Serialize};

use super::model::{Gradients, NetParams};
use super::ops::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self { lr: 1e-4, decay: 0.99, eps: 0.1 }
    }
}

/// Running mean of squared gradients, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp<F> {
    pub config: RmsPropConfig,
    mean_sq: Vec<F>,
}

impl<F: Real> RmsProp<F> {
    pub fn new(config: RmsPropConfig) -> Self {
        Self { config, mean_sq: vec![F::zero(); super::layout::param_count()] }
    }

    pub fn mean_sq(&self) -> &[F] {
        &self.mean_sq
    }

    /// `s <- decay*s + (1-decay)*g²; p <- p - lr*g/sqrt(s + eps)`.
    ///
    /// Non-finite gradients are rejected before anything is modified.
    pub fn apply(&mut self, params: &mut NetParams<F>, grads: &Gradients<F>) -> Result<()> {
        self.apply_with_lr(params, grads, self.config.lr)
    }

    pub fn apply_with_lr(&mut self, params: &mut NetParams<F>, grads: &Gradients<F>, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let decay = F::lit(self.config.decay);
        let keep = F::lit(1.0 - self.config.decay);
        let eps = F::lit(self.config.eps);
        let lr = F::lit(lr);
        for ((p, s), g) in params.values_mut().iter_mut().zip(self.mean_sq.iter_mut()).zip(grads.values()) {
            *s = decay * *s + keep * *g * *g;
            *p -= lr * *g / (*s + eps).sqrt();
        }
        Ok(())
    }
}
