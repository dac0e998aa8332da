//! AdamW with decoupled weight decay.
//!
//! ```text
//! θ ← θ − lr·λ·θ
//! m ← β₁m + (1−β₁)g          v ← β₂v + (1−β₂)g²
//! m̂ = m / (1−β₁ᵗ)            v̂ = v / (1−β₂ᵗ)
//! θ ← θ − lr·m̂ / (√v̂ + ε)
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TransformerModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamWConfig { lr, ..Self::default() }
    }
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub hyper: AdamWConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn new(hyper: AdamWConfig) -> Self {
        OptimizerState {
            hyper,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub(crate) fn from_parts(hyper: AdamWConfig, step: u64, moments: BTreeMap<String, Moments>) -> Self {
        OptimizerState { hyper, step, moments }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &BTreeMap<String, Moments> {
        &self.moments
    }
}

/// Applies one AdamW update to every parameter in `trainable`.
///
/// Parameters outside `trainable` are neither read nor written, and get no
/// optimizer state. Every trainable parameter must have a gradient of its own
/// length in `grads`; nothing is modified if one is missing.
pub fn adamw_step(
    model: &mut TransformerModel,
    grads: &HashMap<&str, &[f32]>,
    trainable: &BTreeSet<String>,
    state: &mut OptimizerState,
) -> Result<()> {
    for name in trainable {
        let param = model
            .param(name)
            .ok_or_else(|| Error::Contract(format!("trainable parameter {name} not in model")))?;
        match grads.get(name.as_str()) {
            None => return Err(Error::Contract(format!("no gradient for trainable parameter {name}"))),
            Some(g) if g.len() != param.len() => {
                return Err(Error::Contract(format!(
                    "gradient for {name} has {} values, parameter has {}",
                    g.len(),
                    param.len()
                )))
            }
            Some(_) => {}
        }
    }
    state.step += 1;
    let h = state.hyper;
    let t = state.step as i32;
    let bc1 = (1.0 - h.beta1.powi(t)) as f32;
    let bc2 = (1.0 - h.beta2.powi(t)) as f32;
    let (lr, b1, b2, eps) = (h.lr as f32, h.beta1 as f32, h.beta2 as f32, h.eps as f32);
    let decay = 1.0 - (h.lr * h.weight_decay) as f32;
    for (name, param) in model.params_mut() {
        if !trainable.contains(name) {
            continue;
        }
        let g = grads[name];
        let mom = state.moments.entry(name.to_string()).or_insert_with(|| Moments {
            m: vec![0.0; g.len()],
            v: vec![0.0; g.len()],
        });
        for (((w, &g), m), v) in param
            .data_mut()
            .iter_mut()
            .zip(g)
            .zip(mom.m.iter_mut())
            .zip(mom.v.iter_mut())
        {
            *w *= decay;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f32>], max_norm: f32) -> f32 {
    let norm = grads
        .iter()
        .flatten()
        .map(|&g| f64::from(g) * f64::from(g))
        .sum::<f64>()
        .sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}
