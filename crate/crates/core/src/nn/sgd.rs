//! Plain SGD with optional weight decay (no momentum).

use crate::error::{Error, Result};

/// SGD hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f32,
    pub weight_decay: f32,
}

impl SgdConfig {
    pub fn new(learning_rate: f32, weight_decay: f32) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {learning_rate}")));
        }
        if weight_decay < 0.0 {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {weight_decay}")));
        }
        Ok(SgdConfig { learning_rate, weight_decay })
    }
}

/// In-place update `p <- p - lr * (g + wd * p)`.
pub fn sgd_step(params: &mut [f32], grads: &[f32], cfg: SgdConfig) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Dimension(format!(
            "sgd: {} params vs {} grads",
            params.len(),
            grads.len()
        )));
    }
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= cfg.learning_rate * (g + cfg.weight_decay * *p);
    }
    Ok(())
}
