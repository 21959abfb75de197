use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every slot.
///
/// Gradients are left in place; the caller zeroes them.
pub fn adam_step(store: &mut ParameterStore, cfg: &AdamConfig) -> Result<()> {
    for (_, slot) in store.slots() {
        if !slot.grad.all_finite() {
            return Err(Error::NonFinite(format!("gradient of `{}`", slot.name)));
        }
    }
    let t = store.step() + 1;
    let bias1 = 1.0 - cfg.beta1.powi(t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(t as i32);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let slot = store.slot_mut(id);
        let grads = slot.grad.values();
        let m = slot.first_moment.values_mut();
        for (mi, g) in m.iter_mut().zip(grads) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
        }
        let v = slot.second_moment.values_mut();
        for (vi, g) in v.iter_mut().zip(grads) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
        }
        let (m, v) = (slot.first_moment.values(), slot.second_moment.values());
        for ((w, mi), vi) in slot.value.values_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    store.set_step(t);
    Ok(())
}
