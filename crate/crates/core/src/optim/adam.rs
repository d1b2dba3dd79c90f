//! Adam with bias-corrected moments.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

impl AdamState {
    pub fn for_param(param: &Tensor) -> Self {
        Self { m: Tensor::zeros(param.shape()), v: Tensor::zeros(param.shape()), t: 0 }
    }
}

/// One Adam update of `param` in place.
///
/// `m ← β1·m + (1-β1)·g`, `v ← β2·v + (1-β2)·g²`, then with the step
/// counter already advanced, `θ ← θ - η·m̂ / √(v̂ + ε)` where
/// `m̂ = m/(1-β1^t)` and `v̂ = v/(1-β2^t)`.
///
/// A gradient with any non-finite entry is rejected and leaves both the
/// parameter and the state untouched.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.m.shape() {
        return Err(Error::shape(format!(
            "adam: param {:?}, grad {:?}, state {:?}",
            param.shape(),
            grad.shape(),
            state.m.shape()
        )));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("adam: gradient contains NaN or infinity".into()));
    }
    apply(param, grad, state, cfg);
    Ok(())
}

fn apply(param: &mut Tensor, grad: &Tensor, state: &mut AdamState, cfg: &AdamConfig) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), mi), vi) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *p -= cfg.lr * m_hat / (v_hat + cfg.eps).sqrt();
    }
}

/// Adam over an ordered group of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Self { config, states: params.iter().map(|p| AdamState::for_param(p)).collect() }
    }

    pub fn steps(&self) -> u64 {
        self.states.first().map_or(0, |s| s.t)
    }

    /// Updates every parameter, or none if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(Error::shape(format!(
                "adam: {} params, {} grads, {} states",
                params.len(),
                grads.len(),
                self.states.len()
            )));
        }
        for ((p, g), s) in params.iter().zip(grads).zip(&self.states) {
            if p.shape() != g.shape() || p.shape() != s.m.shape() {
                return Err(Error::shape(format!("adam: param {:?} vs grad {:?}", p.shape(), g.shape())));
            }
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("adam: gradient contains NaN or infinity".into()));
        }
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.states) {
            apply(p, g, s, &self.config);
        }
        Ok(())
    }
}
