//! Adam with the inverse-square-root warmup schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;

/// Learning rate at `step` (1-based):
/// base * d_model^(-1/2) * min(step^(-1/2), step * w^(-3/2)).
/// Rises linearly for w steps, decays as 1/sqrt(step) after; the two
/// branches meet at step = w, the peak.
pub fn noam_lr(step: u64, d_model: usize, warmup: u64, base: f64) -> f64 {
    let step = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    base * (d_model as f64).powf(-0.5) * (step.powf(-0.5)).min(step * w.powf(-1.5))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam state plus the schedule constants. Moment buffers are keyed by
/// parameter name and created on first use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub base_lr: f64,
    pub warmup: u64,
    pub d_model: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn new(base_lr: f64, warmup: u64, d_model: usize) -> Self {
        OptimizerState {
            step: 0,
            base_lr,
            warmup,
            d_model,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            moments: BTreeMap::new(),
        }
    }

    pub fn current_lr(&self) -> f64 {
        noam_lr(self.step, self.d_model, self.warmup, self.base_lr)
    }
}

/// One Adam update over every parameter that has a gradient. Parameters are
/// visited in name order; frozen or grad-less parameters are skipped (their
/// moments do not advance either). Gradients are consumed (zeroed).
pub fn adam_step(state: &mut OptimizerState, params: &BTreeMap<String, Tensor>) {
    state.step += 1;
    let lr = state.current_lr();
    let b1 = state.beta1;
    let b2 = state.beta2;
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    for (name, p) in params {
        let grad = match p.grad() {
            Some(g) => g,
            None => continue,
        };
        let mom = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            m: vec![0.0; grad.len()],
            v: vec![0.0; grad.len()],
        });
        let mut value = p.to_vec();
        for i in 0..grad.len() {
            mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * grad[i];
            mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mhat = mom.m[i] / bc1;
            let vhat = mom.v[i] / bc2;
            value[i] -= lr * mhat / (vhat.sqrt() + state.eps);
        }
        p.set_value(&value);
        p.zero_grad();
    }
}

pub fn zero_grads(params: &BTreeMap<String, Tensor>) {
    for p in params.values() {
        p.zero_grad();
    }
}
