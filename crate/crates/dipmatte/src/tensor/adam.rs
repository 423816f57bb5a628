//! Bias-corrected Adam update.

use super::{Element, TensorError};

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment buffers plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState<E: Element> {
    pub m: Vec<E>,
    pub v: Vec<E>,
    pub t: u64,
}

impl<E: Element> AdamState<E> {
    pub fn new(numel: usize) -> Self {
        AdamState {
            m: vec![E::zero(); numel],
            v: vec![E::zero(); numel],
            t: 0,
        }
    }
}

/// One in-place Adam step. Increments `state.t`.
pub fn adam_step<E: Element>(
    params: &mut [E],
    grads: &[E],
    state: &mut AdamState<E>,
    hp: &AdamHyper,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::AdamShapeMismatch {
            param: params.len(),
            grad: grads.len(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = E::from_f64(hp.beta1);
    let b2 = E::from_f64(hp.beta2);
    let lr = E::from_f64(hp.lr);
    let eps = E::from_f64(hp.eps);
    let bc1 = E::one() - b1.powi(t);
    let bc2 = E::one() - b2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (E::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (E::one() - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
