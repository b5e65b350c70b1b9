use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::scalar::{cst, Real};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coefficient of the l2 term added to each gradient.
    pub weight_decay: f64,
}

impl AdamConfig {
    /// Adversarial-training defaults.
    pub const GAN: AdamConfig = AdamConfig {
        lr: 2e-4,
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 1e-6,
    };
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::GAN
    }
}

/// Bias-corrected Adam over a fixed parameter group.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    ids: Vec<ParamId>,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, ids: &[ParamId], store: &ParamStore<T>) -> Self {
        let zeros = || ids.iter().map(|&id| Tensor::zeros(store.value(id).shape())).collect();
        Adam {
            config,
            ids: ids.to_vec(),
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// Restores the optimizer state saved from an identically shaped group.
    pub fn restore(&mut self, step: u64, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>) -> Result<()> {
        if m.len() != self.ids.len() || v.len() != self.ids.len() {
            return Err(Error::Contract("optimizer state has the wrong number of tensors".into()));
        }
        for ((a, b), c) in self.m.iter().zip(&m).zip(&v) {
            if a.shape() != b.shape() || a.shape() != c.shape() {
                return Err(Error::shape("adam state", a.shape(), b.shape()));
            }
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One update using the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for &id in &self.ids {
            if store.grad(id).is_none() {
                return Err(Error::MissingGrad(store.name(id).into()));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - num_traits::Float::powi(c.beta1, t);
        let bc2 = 1.0 - num_traits::Float::powi(c.beta2, t);
        let (b1, b2): (T, T) = (cst(c.beta1), cst(c.beta2));
        let (ob1, ob2) = (T::one() - b1, T::one() - b2);
        let wd: T = cst(c.weight_decay);
        let step_size: T = cst(c.lr / bc1);
        let sqrt_bc2: T = cst(num_traits::Float::sqrt(bc2));
        let eps: T = cst(c.eps);
        for (j, &id) in self.ids.iter().enumerate() {
            let g = store.grad(id).unwrap().clone();
            let p = store.value_mut(id).data_mut();
            let (m, v) = (self.m[j].data_mut(), self.v[j].data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i] + wd * p[i];
                m[i] = b1 * m[i] + ob1 * gi;
                v[i] = b2 * v[i] + ob2 * gi * gi;
                p[i] -= step_size * m[i] / (v[i].sqrt() / sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}
