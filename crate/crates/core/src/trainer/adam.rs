//! Bias-corrected Adam over a parameter arena.

use crate::kernel::{ParamSet, Precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
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

/// First/second moment estimates, aligned with the parameter arena.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ParamSet) -> Self {
        OptimizerState {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }
}

/// One optimizer step; zeroes gradients afterwards and bumps the
/// parameter version so precomputed tables detect staleness.
///
/// In single precision the updated parameters and moments are rounded
/// through `f32`, which keeps in-memory state identical to what a
/// checkpoint stores and makes resume bit-exact.
pub fn adam_step(params: &mut ParamSet, state: &mut OptimizerState, lr: f64, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    let single = crate::kernel::precision() == Precision::Single;
    let q = |x: f64| if single { x as f32 as f64 } else { x };

    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let grad = p.grad.data();
        let value = p.value.data_mut();
        for j in 0..value.len() {
            let g = grad[j];
            m[j] = q(cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g);
            v[j] = q(cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g);
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            value[j] = q(value[j] - lr * m_hat / (v_hat.sqrt() + cfg.eps));
        }
        for g in p.grad.data_mut() {
            *g = 0.0;
        }
    }
    params.bump_version();
}

/// Inverse-square-root schedule with linear warmup:
/// `lr_peak * step / warmup` up to the warmup step, then
/// `lr_peak * sqrt(warmup / step)`.
pub fn lr_schedule(step: u64, warmup: u64, lr_peak: f64) -> f64 {
    debug_assert!(warmup >= 1);
    if step <= warmup {
        lr_peak * step as f64 / warmup as f64
    } else {
        lr_peak * (warmup as f64 / step as f64).sqrt()
    }
}
