//! Adam with bias-corrected moments.

use super::params::Weights;
use super::NeuralError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Weights,
    pub v: Weights,
    pub t: u64,
}

impl AdamState {
    pub fn new(like: &Weights) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }
}

/// One update of a flat parameter slice. `t` is the (already incremented) step.
pub fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64) {
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    for (((w, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

pub fn adam_step(
    weights: &mut Weights,
    grads: &Weights,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NeuralError> {
    if !weights.same_shape(grads) || !weights.same_shape(&state.m) || !weights.same_shape(&state.v) {
        return Err(NeuralError::ShapeMismatch(
            "weights, gradients and optimizer state differ in shape".into(),
        ));
    }
    state.t += 1;
    let t = state.t;
    let g = grads.tensors();
    for (((w, g), m), v) in weights
        .tensors_mut()
        .into_iter()
        .zip(&g)
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        adam_update(w.data, g.data, m.data, v.data, t, lr);
    }
    Ok(())
}
