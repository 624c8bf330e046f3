//! Adam with bias correction and global gradient-norm clipping.

use thiserror::Error;

use crate::policy::{Params, Real, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("optimizer state does not match the parameter layout")]
    Layout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: step counter plus first and second moments laid out like
/// the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new<P: Params<T>>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(&t.shape))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected update. Gradients are checked for finiteness before
    /// anything is modified.
    pub fn step<P: Params<T>>(&mut self, params: &mut P, grads: &P) -> Result<(), OptimError> {
        let grads = grads.tensors();
        if grads.len() != self.m.len() {
            return Err(OptimError::Layout);
        }
        if let Some((name, _)) = grads
            .iter()
            .find(|(_, g)| g.data.iter().any(|x| !x.is_finite()))
        {
            return Err(OptimError::NonFiniteGradient(name.clone()));
        }
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powf(self.step as f64);
        let bc2 = 1.0 - c.beta2.powf(self.step as f64);
        let step_size = c.lr / bc1;
        let bc2_sqrt = bc2.sqrt();
        for (((p, (_, g)), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, g), m), v) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                let g = g.as_f64();
                let m_new = c.beta1 * m.as_f64() + (1.0 - c.beta1) * g;
                let v_new = c.beta2 * v.as_f64() + (1.0 - c.beta2) * g * g;
                *m = T::from_f64(m_new);
                *v = T::from_f64(v_new);
                let denom = v_new.sqrt() / bc2_sqrt + c.eps;
                *p = T::from_f64(p.as_f64() - step_size * m_new / denom);
            }
        }
        Ok(())
    }
}

pub fn global_norm<T: Real, P: Params<T>>(grads: &P) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|x| {
            let x = x.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so the global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Real, P: Params<T>>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = T::from_f64(max_norm / norm);
        for t in grads.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}
