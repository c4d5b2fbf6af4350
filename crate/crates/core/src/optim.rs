//! Adaptive-moment optimiser over a [`ParamStore`].

use crate::autograd::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, e)| Tensor::zeros(e.value.shape())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected update of the parameters in `trainable`; the rest
    /// keep their values and moments.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, trainable: &[ParamId]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for &id in trainable {
            let Some(g) = grads.get(id) else {
                continue;
            };
            let (m, v) = (self.m[id].data_mut(), self.v[id].data_mut());
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / b1t;
                let vh = v[i] / b2t;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
