use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 coefficient: `g += weight_decay * param` before the
    /// moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment accumulators for every tensor of one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store
            .ids()
            .map(|id| Tensor::zeros(store.get(id).shape()))
            .collect();
        AdamState {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &Tensor {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor {
        &self.second[i]
    }

    /// One bias-corrected Adam update of every parameter in `store`.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::arg(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if grads.len() != store.len() || store.len() != self.first.len() {
            return Err(Error::dim(format!(
                "{} gradients / {} moments for {} parameters",
                grads.len(),
                self.first.len(),
                store.len()
            )));
        }
        for id in store.ids() {
            if grads.get(id).shape() != store.get(id).shape() {
                return Err(Error::dim(format!(
                    "gradient shape mismatch for {}",
                    store.name(id)
                )));
            }
            if !grads.get(id).is_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient for parameter {}",
                    store.name(id)
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for id in store.ids() {
            let i = id.index();
            let g = grads.get(id).data();
            let p = store.get_mut(id).data_mut();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for j in 0..p.len() {
                let gj = g[j] + weight_decay * p[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::vector(vec![value]));
        s
    }

    fn grad(store: &ParamStore, g: f64) -> Gradients {
        let mut gr = Gradients::zeros_like(store);
        gr.get_mut(store.ids().next().unwrap()).data_mut()[0] = g;
        gr
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut store = single(1.25);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut adam = AdamState::new(&store, cfg);
        let g = grad(&store, 0.0);
        for _ in 0..5 {
            adam.step(&mut store, &g, 0.1).unwrap();
        }
        assert_eq!(store.get(store.ids().next().unwrap()).data(), &[1.25]);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = single(0.0);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut adam = AdamState::new(&store, cfg);
        let g = grad(&store, 1.0);
        adam.step(&mut store, &g, 0.01).unwrap();
        let p = store.get(store.ids().next().unwrap()).data()[0];
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        assert!((p + 0.01).abs() < 1e-9);
    }

    #[test]
    fn weight_decay_enters_the_gradient() {
        let mut store = single(10.0);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        let g = grad(&store, 0.0);
        adam.step(&mut store, &g, 0.01).unwrap();
        // effective gradient is 1e-4 * 10 = 1e-3; m = 0.1 * 1e-3
        assert!((adam.first_moment(0).data()[0] - 1e-4).abs() < 1e-18);
        assert!((adam.second_moment(0).data()[0] - 1e-9).abs() < 1e-21);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut store = single(1.0);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        let g = grad(&store, f64::NAN);
        match adam.step(&mut store, &g, 0.01) {
            Err(Error::Training(msg)) => assert!(msg.contains("p")),
            other => panic!("expected training error, got {other:?}"),
        }
        assert_eq!(adam.step_count(), 0);
    }
}
