use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every parameter in `store`. Fails without touching any
    /// value if a parameter has no gradient or a non-finite one.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for id in store.ids() {
            let t = store.get(id);
            match &t.grad {
                None => return Err(Error::MissingGradient(store.name(id).into())),
                Some(g) if g.iter().any(|v| !v.is_finite()) => {
                    return Err(Error::NonFinite(alloc::format!("gradient of `{}`", store.name(id))))
                }
                _ => {}
            }
        }
        if self.m.len() != store.len() {
            self.m = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = store.get_mut(id);
            let g = p.grad.as_ref().expect("checked above");
            for (i, (w, &gi)) in p.data.iter_mut().zip(g).enumerate() {
                let gi = gi as f64;
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                let upd = self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                *w = (*w as f64 - upd) as f32;
            }
        }
        Ok(())
    }
}

/// Step decay: the rate halves every `every` epochs.
pub fn halving_lr(base: f64, epoch: usize, every: usize) -> f64 {
    base * 0.5f64.powi((epoch / every.max(1)) as i32)
}
