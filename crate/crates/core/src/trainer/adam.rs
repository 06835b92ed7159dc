use serde::{Deserialize, Serialize};

use crate::nn::{ParamStore, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One Adam update of `params` in place. Gradients are checked before any
/// tensor is touched, so an error leaves parameters and state unchanged.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    params.check_layout(grads)?;
    params.check_layout(&state.m)?;
    let step = state.t + 1;
    for g in grads.iter() {
        if g.value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: g.name.clone(),
                step,
            });
        }
    }
    state.t = step;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(step.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - beta2.powi(step.min(i32::MAX as u64) as i32);
    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
    let (ob1, ob2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
    let step_size = T::lit(lr / c1);
    let inv_c2 = T::lit(1.0 / c2);
    let eps = T::lit(eps);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        ndarray::Zip::from(&mut p.value)
            .and(&g.value)
            .and(&mut m.value)
            .and(&mut v.value)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + ob1 * g;
                *v = b2 * *v + ob2 * g * g;
                *p -= step_size * *m / ((*v * inv_c2).sqrt() + eps);
            });
    }
    Ok(())
}
