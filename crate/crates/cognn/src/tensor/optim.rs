//! Named parameters, Glorot initialization, and Adam.
//!
//! Parameters live outside any tape as plain tensors. Each forward pass
//! registers the ones it touches as leaves through a [`Bindings`] table —
//! keyed by name, so a weight used several times in one pass (e.g. an action
//! network shared across layers) binds to a single leaf and its gradient
//! contributions accumulate there.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor};

/// Glorot (Xavier) uniform init: `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`,
/// drawn row-major.
pub fn glorot_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new(-bound, bound);
    let data: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(&[fan_in, fan_out], data).expect("glorot shape is consistent")
}

/// A named trainable tensor.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Param {
        Param {
            name: name.into(),
            value,
        }
    }

    pub fn glorot(
        name: impl Into<String>,
        rng: &mut ChaCha8Rng,
        fan_in: usize,
        fan_out: usize,
    ) -> Param {
        Param::new(name, glorot_uniform(rng, fan_in, fan_out))
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Param {
        Param::new(name, Tensor::zeros(rows, cols))
    }
}

/// Per-pass table of parameter leaves, keyed by parameter name.
#[derive(Default, Debug)]
pub struct Bindings {
    map: BTreeMap<String, Tensor>,
}

impl Bindings {
    pub fn new() -> Bindings {
        Bindings::default()
    }

    /// Leaf tensor for `param` on `tape`, registering it on first use.
    pub fn track(&mut self, tape: &Tape, param: &Param) -> Result<Tensor> {
        if let Some(existing) = self.map.get(&param.name) {
            // Same name must mean the same tensor, or gradients would alias.
            if !std::ptr::eq(existing.data().as_ptr(), param.value.data().as_ptr()) {
                return Err(Error::Contract(format!(
                    "two distinct parameters share the name '{}'",
                    param.name
                )));
            }
            return Ok(existing.clone());
        }
        let leaf = tape.leaf(&param.value)?;
        self.map.insert(param.name.clone(), leaf.clone());
        Ok(leaf)
    }

    /// Map leaf gradients back to parameter names.
    pub fn named_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, leaf) in &self.map {
            if let Some(g) = grads.get(leaf) {
                out.insert(name.clone(), g.clone());
            }
        }
        out
    }
}

/// Adam with bias correction.
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    /// Defaults: `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one update. Parameters without a gradient entry are left
    /// untouched (their moments do not advance either).
    pub fn step(
        &mut self,
        params: &mut [&mut Param],
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for param in params.iter_mut() {
            let Some(grad) = grads.get(&param.name) else {
                continue;
            };
            if grad.shape() != param.value.shape() {
                return Err(Error::Shape(format!(
                    "adam: gradient shape {:?} does not match parameter '{}' {:?}",
                    grad.shape(),
                    param.name,
                    param.value.shape()
                )));
            }
            let n = param.value.numel();
            let (m, v) = self
                .moments
                .entry(param.name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let g = grad.data();
            let old = param.value.data();
            let mut new = Vec::with_capacity(n);
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                new.push(old[i] - self.lr * mhat / (vhat.sqrt() + self.eps));
            }
            param.value = Tensor::from_vec(param.value.shape(), new)?;
        }
        Ok(())
    }
}
