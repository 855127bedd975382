//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::tensor::{Parameter, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one ordered parameter list.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated grads. Grads are left as is;
    /// frozen parameters are skipped.
    pub fn step(&mut self, params: &mut [&mut Parameter]) {
        if self.first.len() != params.len() {
            self.first = params.iter().map(|p| Tensor::zeros_like(&p.value)).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if !p.trainable {
                continue;
            }
            let grad = p.grad.data();
            let m = m.data_mut();
            let v = v.data_mut();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Parameter {
        Parameter::new(Tensor::new(&[1], vec![v]).unwrap())
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(0.0);
        p.grad.data_mut()[0] = 2.0;
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        adam.step(&mut [&mut p]);
        assert!((p.value.data()[0] + 0.1).abs() < 1e-8);
        // grads are the caller's to clear
        assert_eq!(p.grad.data()[0], 2.0);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = scalar(1.5);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut p]);
        assert_eq!(p.value.data()[0], 1.5);
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut p = scalar(1.0);
        let mut adam = Adam::new(AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        });
        for _ in 0..100 {
            p.grad.data_mut()[0] = 2.0 * p.value.data()[0];
            adam.step(&mut [&mut p]);
        }
        assert!(p.value.data()[0].abs() < 0.05, "{}", p.value.data()[0]);
        assert_eq!(adam.steps_taken(), 100);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut p = scalar(1.0);
        p.trainable = false;
        p.grad.data_mut()[0] = 1.0;
        Adam::new(AdamConfig::default()).step(&mut [&mut p]);
        assert_eq!(p.value.data()[0], 1.0);
    }
}
