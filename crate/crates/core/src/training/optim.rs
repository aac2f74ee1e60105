use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::nets::ParamSet;

/// RMSprop with the stabilizer added outside the square root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    pub acc: BTreeMap<String, Vec<f64>>,
}

impl OptimState {
    pub fn new(lr: f64, alpha: f64, eps: f64) -> Self {
        Self {
            lr,
            alpha,
            eps,
            acc: BTreeMap::new(),
        }
    }

    /// `acc ← α·acc + (1-α)·g²;  θ ← θ - lr·g / (√acc + eps)`.
    ///
    /// Parameters without a gradient entry are left untouched.
    pub fn update(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>) {
        for (name, theta) in params.iter_mut() {
            let Some(g) = grads.get(name) else {
                continue;
            };
            let acc = self
                .acc
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; theta.numel()]);
            for ((t, a), &g) in theta.data_mut().iter_mut().zip(acc.iter_mut()).zip(g.data()) {
                *a = self.alpha * *a + (1.0 - self.alpha) * g * g;
                *t -= self.lr * g / (a.sqrt() + self.eps);
            }
        }
    }
}

pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
