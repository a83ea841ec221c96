//! Adam optimiser.

use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam<T: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.5, beta2: 0.999, eps: 1e-8, t: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every trainable parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) {
        self.t += 1;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = self.lr * c2.sqrt() / c1;
        for (id, grad) in grads {
            if !store.is_trainable(*id) {
                continue;
            }
            let slot = &mut self.moments[id.0];
            let (m, v) = slot.get_or_insert_with(|| (Tensor::zeros(grad.shape()), Tensor::zeros(grad.shape())));
            let p = store.get_mut(*id);
            for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let gr = gv.f64();
                let mn = b1 * mv.f64() + (1.0 - b1) * gr;
                let vn = b2 * vv.f64() + (1.0 - b2) * gr * gr;
                *mv = T::of(mn);
                *vv = T::of(vn);
                *pv = T::of(pv.f64() - step * mn / (vn.sqrt() + self.eps * c2.sqrt()));
            }
        }
    }
}
