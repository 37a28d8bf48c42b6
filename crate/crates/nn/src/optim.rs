//! First-order optimizers. State is keyed by parameter name so it can be
//! written to and restored from an archive.

use std::collections::BTreeMap;

use crate::error::{NnError, Result};
use crate::graph::Grads;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum and L2 weight decay added to the gradient.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            buffers: BTreeMap::new(),
        }
    }

    /// Updates every trainable parameter that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) {
        for (id, grad) in grads.params() {
            if !store.is_trainable(id) {
                continue;
            }
            let name = store.name(id).to_string();
            let param = store.get_mut(id);
            let mut d = grad.clone();
            if self.weight_decay != 0.0 {
                for (g, p) in d.data_mut().iter_mut().zip(param.data()) {
                    *g += self.weight_decay * p;
                }
            }
            let buf = match self.buffers.get_mut(&name) {
                Some(buf) => {
                    for (b, g) in buf.data_mut().iter_mut().zip(d.data()) {
                        *b = self.momentum * *b + g;
                    }
                    buf
                }
                None => self.buffers.entry(name).or_insert(d),
            };
            for (p, b) in param.data_mut().iter_mut().zip(buf.data()) {
                *p -= lr * b;
            }
        }
    }

    pub fn state(&self) -> BTreeMap<String, Tensor> {
        self.buffers
            .iter()
            .map(|(k, v)| (format!("momentum.{k}"), v.clone()))
            .collect()
    }

    pub fn load_state(&mut self, state: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut buffers = BTreeMap::new();
        for (k, v) in state {
            let name = k
                .strip_prefix("momentum.")
                .ok_or_else(|| NnError::Archive(format!("unexpected sgd state entry {k}")))?;
            buffers.insert(name.to_string(), v.clone());
        }
        self.buffers = buffers;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (id, grad) in grads.params() {
            if !store.is_trainable(id) {
                continue;
            }
            let name = store.name(id).to_string();
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            let v = self.v.entry(name).or_insert_with(|| Tensor::zeros(grad.shape()));
            let param = store.get_mut(id);
            for (((p, g), m), v) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
    }

    pub fn state(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        out.insert("step".to_string(), Tensor::scalar(self.step as f64));
        for (k, t) in &self.m {
            out.insert(format!("m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("v.{k}"), t.clone());
        }
        out
    }

    pub fn load_state(&mut self, state: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut fresh = Adam::new(self.beta1, self.beta2, self.eps);
        for (k, t) in state {
            if k == "step" {
                fresh.step = t.item() as u64;
            } else if let Some(name) = k.strip_prefix("m.") {
                fresh.m.insert(name.to_string(), t.clone());
            } else if let Some(name) = k.strip_prefix("v.") {
                fresh.v.insert(name.to_string(), t.clone());
            } else {
                return Err(NnError::Archive(format!("unexpected adam state entry {k}")));
            }
        }
        *self = fresh;
        Ok(())
    }
}
