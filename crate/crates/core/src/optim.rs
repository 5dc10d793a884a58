//! Adam with bias correction.
//!
//! ```text
//! m <- b1*m + (1-b1)*g
//! v <- b2*v + (1-b2)*g^2
//! p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
//! ```
//!
//! Frozen parameters are skipped and never get moment buffers.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, value_err, Result};
use crate::nn::ParamSlot;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(value_err!("adam lr must be > 0, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(value_err!("adam {name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(value_err!("adam epsilon must be > 0, got {}", self.epsilon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    moments: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            moments: Vec::new(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Whether the parameter at `index` has moment buffers (i.e. was ever trainable).
    pub fn has_state(&self, index: usize) -> bool {
        matches!(self.moments.get(index), Some(Some(_)))
    }

    /// Second-moment buffer of the parameter at `index`, if any.
    pub fn second_moment(&self, index: usize) -> Option<&[f64]> {
        self.moments.get(index)?.as_ref().map(|m| m.v.as_slice())
    }

    /// Applies one update to every trainable slot. The slot list must keep
    /// the same order and shapes from step to step.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_>]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = vec![None; slots.len()];
        } else if self.moments.len() != slots.len() {
            return Err(shape_err!(
                "optimizer tracks {} parameters, got {}",
                self.moments.len(),
                slots.len()
            ));
        }
        for slot in slots.iter() {
            if slot.value.shape() != slot.grad.shape() {
                return Err(shape_err!(
                    "gradient {:?} does not match parameter `{}` {:?}",
                    slot.grad.shape(),
                    slot.name,
                    slot.value.shape()
                ));
            }
            if slot.trainable {
                if let Some(i) = slot.grad.data().iter().position(|g| !g.is_finite()) {
                    return Err(value_err!(
                        "non-finite gradient in `{}` at element {i}",
                        slot.name
                    ));
                }
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step.min(i32::MAX as u64) as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (slot, state) in slots.iter_mut().zip(self.moments.iter_mut()) {
            if !slot.trainable {
                continue;
            }
            let n = slot.value.len();
            let mom = state.get_or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            if mom.m.len() != n {
                return Err(shape_err!("parameter `{}` changed size", slot.name));
            }
            let grad = slot.grad.data();
            let value = slot.value.data_mut();
            for i in 0..n {
                let g = grad[i];
                mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * g;
                mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * g * g;
                let m_hat = mom.m[i] / bc1;
                let v_hat = mom.v[i] / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    /// Convenience wrapper for loose tensors: every parameter is trainable.
    pub fn step_tensors(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            ));
        }
        let mut slots: Vec<ParamSlot<'_>> = params
            .iter_mut()
            .zip(grads)
            .enumerate()
            .map(|(i, (value, grad))| ParamSlot {
                name: format!("param{i}"),
                value,
                grad,
                trainable: true,
            })
            .collect();
        self.step(&mut slots)
    }
}
