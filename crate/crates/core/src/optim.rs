//! Adam over a subset of a [`ParamStore`].

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::graph::Gradients;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam state for a fixed set of parameters; moments are stored in the
/// same order as `params`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub params: Vec<ParamId>,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, params: Vec<ParamId>, config: AdamConfig) -> Self {
        let m: Vec<Tensor> = params.iter().map(|&id| Tensor::zeros(store.get(id).shape())).collect();
        let v = m.clone();
        Self { config, params, m, v, t: 0 }
    }

    /// One update with learning rate `lr`. Parameters without a gradient
    /// keep their value and moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(invalid!("learning rate must be finite and non-negative, got {}", lr));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
        for (i, &id) in self.params.iter().enumerate() {
            let Some(g) = grads.param(id) else { continue };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = store.get_mut(id).data_mut();
            for (((w, m), v), &g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *w -= lr * mh / (libm::sqrt(vh) + eps);
            }
        }
        Ok(())
    }
}
