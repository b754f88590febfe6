use super::params::Params;
use super::Real;
use crate::error::{OocsError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, laid out like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    pub hyper: AdamHyper,
    m: Params<T>,
    v: Params<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &Params<T>, hyper: AdamHyper) -> Self {
        Self {
            step: 0,
            hyper,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Real>(params: &mut Params<T>, grads: &Params<T>, state: &mut AdamState<T>) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(OocsError::Dimension(
            "gradient or optimizer state does not match the parameter layout".into(),
        ));
    }
    state.step += 1;
    let h = state.hyper;
    let t = state.step as i32;
    let step_size = h.lr / (1.0 - h.beta1.powi(t));
    let v_corr = 1.0 / (1.0 - h.beta2.powi(t));
    let (b1, b2) = (T::from_f64(h.beta1), T::from_f64(h.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - h.beta1), T::from_f64(1.0 - h.beta2));
    let (step_size, v_corr, eps) = (T::from_f64(step_size), T::from_f64(v_corr), T::from_f64(h.eps));
    for (((p, &g), m), v) in params
        .values_mut()
        .zip(grads.values())
        .zip(state.m.values_mut())
        .zip(state.v.values_mut())
    {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        *p = *p - step_size * *m / ((*v * v_corr).sqrt() + eps);
    }
    Ok(())
}
