//! Adam with bias correction, applied to the weight entries of a [`ParamSet`].

use serde::{Deserialize, Serialize};

use crate::nn::{ParamKind, ParamSet};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter entry (buffers
/// keep empty moments).
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = || {
            params
                .entries()
                .iter()
                .map(|e| match e.kind {
                    ParamKind::Weight => Tensor::zeros(e.value.shape()),
                    ParamKind::Buffer => Tensor::zeros(&[0]),
                })
                .collect::<Vec<_>>()
        };
        Adam {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. `grads[i]` is the gradient of entry `i`; entries without a
    /// gradient are left untouched, as are their moments.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &[Option<Tensor<T>>]) {
        self.step += 1;
        let t = self.step as f64;
        let c = self.cfg;
        let step_size = T::lit(c.lr * (1.0 - c.beta2.powf(t)).sqrt() / (1.0 - c.beta1.powf(t)));
        let eps_hat = T::lit(c.eps * (1.0 - c.beta2.powf(t)).sqrt());
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        for (i, entry) in params.entries_mut().iter_mut().enumerate() {
            if entry.kind != ParamKind::Weight {
                continue;
            }
            let Some(g) = grads.get(i).and_then(|g| g.as_ref()) else {
                continue;
            };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = entry.value.data_mut();
            for j in 0..w.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                w[j] = w[j] - step_size * m[j] / (v[j].sqrt() + eps_hat);
            }
        }
    }
}
