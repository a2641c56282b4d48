//! Adam over a subset of a parameter store.

use ndarray::ArrayD;

use super::params::ParamStore;

/// Adam optimizer bound to a fixed set of parameter indices (one group of a
/// store, e.g. the discriminator of one GAN stage).
pub struct Adam {
    indices: Vec<usize>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, groups: &[&str], lr: f64, beta1: f64, beta2: f64) -> Adam {
        let indices = store.group_indices(groups);
        let m = indices
            .iter()
            .map(|&i| ArrayD::zeros(store.entries()[i].value.raw_dim()))
            .collect();
        let v = indices
            .iter()
            .map(|&i| ArrayD::zeros(store.entries()[i].value.raw_dim()))
            .collect();
        Adam {
            indices,
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m,
            v,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Applies one update using `grads`, which must be aligned with the
    /// store (one gradient per parameter, store order).
    pub fn step(&mut self, store: &mut ParamStore, grads: &[ArrayD<f64>]) {
        assert_eq!(grads.len(), store.len(), "grad/store alignment");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, &idx) in self.indices.iter().enumerate() {
            let g = &grads[idx];
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            m.zip_mut_with(g, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            let mut value = store.entries()[idx].value.clone();
            ndarray::Zip::from(&mut value)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &mi, &vi| {
                    let mhat = mi / bc1;
                    let vhat = vi / bc2;
                    *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
            store.set_value(super::params::ParamId(idx), value);
        }
    }
}
