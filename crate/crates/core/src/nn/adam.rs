//! Adam optimizer with bias correction.

use super::graph::Grads;
use super::params::{Bound, ParamStore};
use super::scalar::Scalar;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update on a single tensor. `t` is the 1-based step count.
pub fn adam_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    m: &mut Tensor<T>,
    v: &mut Tensor<T>,
    t: u64,
    cfg: &AdamConfig,
) {
    debug_assert_eq!(param.shape(), grad.shape());
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let eps = T::from_f64(cfg.eps);
    // Bias-corrected step size folds the corrections into lr.
    let corr1 = 1.0 - cfg.beta1.powi(t as i32);
    let corr2 = 1.0 - cfg.beta2.powi(t as i32);
    let alpha = T::from_f64(cfg.lr * corr2.sqrt() / corr1);
    let p = param.data_mut();
    let md = m.data_mut();
    let vd = v.data_mut();
    let gd = grad.data();
    for i in 0..p.len() {
        let g = gd[i];
        md[i] = b1 * md[i] + (one - b1) * g;
        vd[i] = b2 * vd[i] + (one - b2) * g * g;
        p[i] = p[i] - alpha * md[i] / (vd[i].sqrt() + eps);
    }
}

/// Optimizer state for a whole [`ParamStore`].
pub struct Adam<T> {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let m = (0..store.len())
            .map(|i| Tensor::zeros(store.tensor(i).shape()))
            .collect();
        let v = (0..store.len())
            .map(|i| Tensor::zeros(store.tensor(i).shape()))
            .collect();
        Adam {
            cfg,
            step: 0,
            m,
            v,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    /// Apply one step using gradients read back through the binding.
    /// Parameters with no gradient this step are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>, bound: &Bound) {
        self.step += 1;
        for id in 0..store.len() {
            let Some(g) = grads.get(bound.by_index(id)) else {
                continue;
            };
            adam_step(
                store.tensor_mut(id),
                g,
                &mut self.m[id],
                &mut self.v[id],
                self.step,
                &self.cfg,
            );
        }
    }

    /// Zero the running moments for one parameter (used when a codeword is
    /// re-seeded and its history no longer applies).
    pub fn reset_slot(&mut self, id: usize, element: usize) {
        self.m[id].data_mut()[element] = T::zero();
        self.v[id].data_mut()[element] = T::zero();
    }
}
