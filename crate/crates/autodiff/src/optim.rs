//! Adaptive moment estimation over named parameter sets.

use std::collections::BTreeMap;

use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Self { beta1: T::lit(0.9), beta2: T::lit(0.999), eps: T::lit(1e-8), step: 0, moments: BTreeMap::new() }
    }
}

impl<T: Real> Adam<T> {
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that has a gradient. Iteration follows key order.
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor<T>>, grads: &BTreeMap<String, Tensor<T>>, lr: T) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![T::zero(); g.len()], vec![T::zero(); g.len()]));
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = self.beta1 * *mv + (T::one() - self.beta1) * gv;
                *vv = self.beta2 * *vv + (T::one() - self.beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
