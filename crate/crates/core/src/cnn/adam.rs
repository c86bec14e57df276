//! Adaptive moment estimation (Adam) with bias correction.

use thiserror::Error;

use super::tensor::Tensor;

#[derive(Debug, Error)]
pub enum AdamError {
    #[error("parameter/gradient/state tensor counts or shapes disagree")]
    ShapeMismatch,
}

/// Adam hyperparameters; the defaults are the standard ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f32) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First/second moment estimates per parameter tensor plus the step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Fresh state with zero moments shaped after the given parameters.
    pub fn new(params: &[&Tensor], hyper: AdamHyper) -> Self {
        let m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { hyper, step: 0, m, v }
    }
}

/// One optimizer step:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, bias-corrected, then
/// `p -= lr * m_hat / (sqrt(v_hat) + eps)`. Elementwise, no cross-talk.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
) -> Result<(), AdamError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(AdamError::ShapeMismatch);
    }
    for ((p, g), (m, v)) in params.iter().zip(grads).zip(state.m.iter().zip(&state.v)) {
        if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
            return Err(AdamError::ShapeMismatch);
        }
    }
    state.step += 1;
    let h = state.hyper;
    let t = state.step as i32;
    let m_corr = 1.0 / (1.0 - h.beta1.powi(t));
    let v_corr = 1.0 / (1.0 - h.beta2.powi(t));
    for ((param, grad), (m, v)) in
        params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let (pd, gd) = (param.data_mut(), grad.data());
        let (md, vd) = (m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let g = gd[i];
            md[i] = h.beta1 * md[i] + (1.0 - h.beta1) * g;
            vd[i] = h.beta2 * vd[i] + (1.0 - h.beta2) * g * g;
            let m_hat = md[i] * m_corr;
            let v_hat = vd[i] * v_corr;
            pd[i] -= h.lr * m_hat / (v_hat.sqrt() + h.epsilon);
        }
    }
    Ok(())
}
