//! Adam with decoupled weight decay.

use std::collections::BTreeMap;

use crate::tensor::{Array, ParameterStore};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> AdamConfig {
        AdamConfig {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub t: u64,
    pub m: BTreeMap<String, Array>,
    pub v: BTreeMap<String, Array>,
}

impl AdamState {
    pub fn new() -> AdamState {
        AdamState::default()
    }
}

/// One bias-corrected update. Decay is decoupled: applied to the parameter
/// directly, not through the gradients, and computed from the pre-update
/// value. Parameters without a gradient entry are untouched.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &BTreeMap<String, Array>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, grad) in grads {
        let Some(param) = store.get(name) else {
            continue;
        };
        if !param.trainable {
            continue;
        }
        let mut w = param.value.clone();
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Array::zeros(grad.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Array::zeros(grad.shape()));
        for i in 0..grad.numel() {
            let g = grad.data()[i];
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * g;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            let w_old = w.data()[i];
            w.data_mut()[i] =
                w_old - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps) - cfg.lr * cfg.weight_decay * w_old;
        }
        store.set(name, w).expect("shape preserved");
    }
}
