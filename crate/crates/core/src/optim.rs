//! Adam with decoupled weight decay.

use crate::model::ModelParams;
use crate::scalar::{c, Scalar};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// First and second moment estimates for every registered tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ModelParams<Matrix<T>>) -> Self {
        let zeros = params.zeros_like().into_flat();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// `θ ← θ - lr · (m̂ / (√v̂ + ε) + wd · θ)`.
    pub fn update(&mut self, params: &mut ModelParams<Matrix<T>>, grads: &ModelParams<Matrix<T>>) {
        self.step += 1;
        let cfg = self.config;
        let (b1, b2) = (c::<T>(cfg.beta1), c::<T>(cfg.beta2));
        let bias1 = c::<T>(1.0 - cfg.beta1.powi(self.step as i32));
        let bias2 = c::<T>(1.0 - cfg.beta2.powi(self.step as i32));
        let (lr, eps, wd) = (c::<T>(cfg.learning_rate), c::<T>(cfg.eps), c::<T>(cfg.weight_decay));
        let grads = grads.named();
        let mut idx = 0;
        params.visit_mut(&mut |_, p| {
            let g = grads[idx].1;
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            idx += 1;
            let it = p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
            for ((theta, &g), (m, v)) in it {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                if cfg.learning_rate == 0.0 {
                    continue;
                }
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *theta -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *theta);
            }
        });
    }
}
