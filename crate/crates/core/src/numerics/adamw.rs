use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamWConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamWConfig {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates and step counter for decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct OptimizerState<T = f32> {
    pub config: AdamWConfig,
    pub step_count: u64,
    first_moment: BTreeMap<String, Vec<T>>,
    second_moment: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0) || !config.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(config.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        Ok(OptimizerState {
            config,
            step_count: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        })
    }

    pub fn first_moment(&self, name: &str) -> Option<&[T]> {
        self.first_moment.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[T]> {
        self.second_moment.get(name).map(Vec::as_slice)
    }
}

/// One AdamW update over every parameter that has a gradient.
///
/// Decay is applied to the parameter directly, scaled by the learning rate,
/// and is independent of the adaptive moment path.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    for (name, g) in grads.params() {
        let p = params
            .get(name)
            .ok_or_else(|| Error::shape(format!("adamw: gradient for unknown parameter {name}")))?;
        if p.len() != g.len() {
            return Err(Error::shape(format!(
                "adamw: {name} has {} values, gradient {}",
                p.len(),
                g.len()
            )));
        }
        if let Some(m) = state.first_moment.get(name) {
            if m.len() != g.len() {
                return Err(Error::shape(format!("adamw: moment shape for {name}")));
            }
        }
    }

    state.step_count += 1;
    let c = state.config;
    let t = state.step_count as i32;
    let bias1 = 1.0 - c.beta1.powi(t);
    let bias2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
    let decay = T::of(1.0 - c.learning_rate * c.weight_decay);
    let step_size = T::of(c.learning_rate / bias1);
    let inv_bias2_sqrt = T::of(1.0 / bias2.sqrt());
    let eps = T::of(c.epsilon);

    for (name, g) in grads.params() {
        let p = params.get_mut(name).expect("checked above").data_mut();
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| vec![T::zero(); g.len()]);
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| vec![T::zero(); g.len()]);
        for i in 0..g.len() {
            m[i] = b1 * m[i] + one_b1 * g[i];
            v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
            let denom = v[i].sqrt() * inv_bias2_sqrt + eps;
            p[i] = p[i] * decay - step_size * m[i] / denom;
        }
    }
    Ok(())
}
