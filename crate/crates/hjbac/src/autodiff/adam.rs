//! Adam optimizer state and update step.

use super::tape::AutodiffError;

/// First/second moment estimates for one parameter group.
///
/// Defaults follow the common convention: beta1 = 0.9, beta2 = 0.999,
/// eps_hat = 1e-8, with bias correction on both moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl AdamState {
    pub fn new(param_len: usize) -> Self {
        AdamState {
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

/// One Adam update of `params` in place.
///
/// The gradient is validated first; on any non-finite entry the update is
/// aborted with params and moments untouched, so the caller still holds the
/// last good state.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), AutodiffError> {
    assert_eq!(params.len(), grad.len(), "gradient length mismatch");
    assert_eq!(params.len(), state.m.len(), "adam state length mismatch");
    for (i, g) in grad.iter().enumerate() {
        if !g.is_finite() {
            return Err(AutodiffError::NonFiniteGrad { index: i });
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps_hat);
    }
    Ok(())
}
