//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::tensor::Array;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First/second moment buffers, one per parameter.
#[derive(Clone, Debug)]
pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    first: Vec<Array>,
    second: Vec<Array>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        let zeros = || params.ids().map(|id| Array::zeros(params.value(id).shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients accumulated in `params`:
    /// `w <- w - lr * (wd * w + m_hat / (sqrt(v_hat) + eps))`.
    pub fn step(&mut self, params: &mut ParamStore) {
        let c = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let grad = params.grad(id).clone();
            let m = self.first[id.0].data_mut();
            let v = self.second[id.0].data_mut();
            let w = params.value_mut(id).data_mut();
            for (i, &g) in grad.data().iter().enumerate() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                w[i] *= 1.0 - c.learning_rate * c.weight_decay;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                w[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Gradients;
    use crate::autodiff::{value_and_grad, ParamId};

    fn single(value: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Array::new(vec![1], vec![value]));
        (s, id)
    }

    fn grads_for(store: &ParamStore, id: ParamId) -> Gradients {
        value_and_grad(store, |t| t.param(id).mul(t.param(id)).sum()).unwrap().1
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first Adam step is lr * g / (|g| + eps).
        let (mut s, id) = single(2.0);
        let cfg = AdamWConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, &s);
        let g = grads_for(&s, id);
        s.zero_grad();
        s.accumulate(&g, 1.0);
        opt.step(&mut s);
        let expected = 2.0 - 0.1 * 4.0 / (4.0 + 1e-8);
        assert!((s.value(id).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn decay_is_decoupled() {
        // Zero gradient: only the decay term acts.
        let (mut s, id) = single(3.0);
        let cfg = AdamWConfig {
            learning_rate: 0.5,
            weight_decay: 0.1,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, &s);
        s.zero_grad();
        opt.step(&mut s);
        assert!((s.value(id).data()[0] - 3.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn minimizes_quadratic() {
        let (mut s, id) = single(1.0);
        let cfg = AdamWConfig {
            learning_rate: 0.05,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg, &s);
        for _ in 0..500 {
            let g = grads_for(&s, id);
            s.zero_grad();
            s.accumulate(&g, 1.0);
            opt.step(&mut s);
        }
        assert!(s.value(id).data()[0].abs() < 1e-2);
        assert_eq!(opt.steps_taken(), 500);
    }
}
