use crate::model::ParamStore;
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdamError {
    #[error("optimizer step on an empty parameter store")]
    EmptyStore,
    #[error("optimizer step without gradients; run backward first")]
    NoGradients,
    #[error("learning rate {0} must be positive and finite")]
    BadLearningRate(f64),
}

/// Adam hyperparameters and the global step count. The per-parameter
/// moments live in the [`ParamStore`] next to each value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, evaluated in `f64` per element.
///
/// Consumes the gradients: they are zeroed afterwards, so a second call
/// without a new backward pass is rejected.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), AdamError> {
    if params.is_empty() {
        return Err(AdamError::EmptyStore);
    }
    if !params.grads_populated() {
        return Err(AdamError::NoGradients);
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(AdamError::BadLearningRate(lr));
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let t = state.t.min(i32::MAX as u64) as i32;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for p in params.params_mut() {
        let grad = p.grad.data();
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        let value = p.value.data_mut();
        for i in 0..value.len() {
            let g = grad[i].to_f64();
            let mi = b1 * m[i].to_f64() + (1.0 - b1) * g;
            let vi = b2 * v[i].to_f64() + (1.0 - b2) * g * g;
            m[i] = T::from_f64(mi);
            v[i] = T::from_f64(vi);
            let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
            value[i] = T::from_f64(value[i].to_f64() - update);
        }
    }
    params.zero_grad();
    Ok(())
}
