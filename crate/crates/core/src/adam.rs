use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Moment accumulators for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamSlot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Steps applied so far.
    pub t: u64,
}

impl AdamSlot {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(param: &mut [f64], grad: &[f64], slot: &mut AdamSlot, cfg: &AdamConfig) -> Result<()> {
    if param.len() != grad.len() || param.len() != slot.m.len() || slot.m.len() != slot.v.len() {
        return Err(Error::Input(format!(
            "adam shapes differ: param {}, grad {}, slot {}",
            param.len(),
            grad.len(),
            slot.m.len()
        )));
    }
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    slot.t += 1;
    let t = slot.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(&mut slot.m).zip(&mut slot.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}
