//! Adam with bias correction.

use crate::transformer::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.98, eps: 1e-8 }
    }
}

/// First and second moments per parameter, kept in f64.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data().len()]).collect();
        Adam { config, t: 0, m: zeros.clone(), v: zeros }
    }

    /// Applies one update from the accumulated gradients and clears them.
    /// A missing gradient counts as zero. If any gradient is non-finite the
    /// step is skipped (moments and step count untouched) and `false` is
    /// returned.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> bool {
        let finite = params.tensors().iter().all(|t| t.grad.as_ref().is_none_or(|g| g.iter().all(|x| x.is_finite())));
        if !finite {
            log::warn!("non-finite gradient, skipping optimizer step {}", self.t + 1);
            params.zero_grad();
            return false;
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (k, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let grad = tensor.grad.take();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (j, w) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad.as_ref().map_or(0.0, |g| g[j] as f64);
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                *w = (*w as f64 - update) as f32;
            }
        }
        true
    }
}
