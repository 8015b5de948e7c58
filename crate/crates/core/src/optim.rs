//! Adaptive-moment (Adam) parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{for_each_param, Parameterized};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

/// Moment accumulators in parameter visiting order (weight then bias per layer).
#[derive(Debug, Clone)]
pub struct OptimizerState<T = f32> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: AdamConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step<M: Parameterized<T> + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        self.step += 1;
        let cfg = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
        let (bc1, bc2) = (T::of(bc1), T::of(bc2));
        let init = self.first.is_empty();
        let mut slot = 0usize;
        let mut error = None;
        let (first, second) = (&mut self.first, &mut self.second);
        for_each_param(model, |name, p| {
            for (value, grad) in [(&mut p.weight, &mut p.grad_weight), (&mut p.bias, &mut p.grad_bias)] {
                if init {
                    first.push(Tensor::zeros(value.shape()));
                    second.push(Tensor::zeros(value.shape()));
                }
                match (first.get_mut(slot), second.get_mut(slot)) {
                    (Some(m), Some(v)) if m.shape() == value.shape() => {
                        let it = value
                            .data_mut()
                            .iter_mut()
                            .zip(grad.data())
                            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
                        for ((w, &g), (m, v)) in it {
                            *m = b1 * *m + (T::one() - b1) * g;
                            *v = b2 * *v + (T::one() - b2) * g * g;
                            let m_hat = *m / bc1;
                            let v_hat = *v / bc2;
                            *w -= lr * m_hat / (v_hat.sqrt() + eps);
                        }
                    }
                    _ => {
                        error.get_or_insert_with(|| format!("optimizer state does not match parameter {name}"));
                    }
                }
                grad.fill(T::zero());
                slot += 1;
            }
        });
        match error {
            Some(e) => Err(Error::Contract(e)),
            None if slot != self.first.len() => Err(Error::Contract("parameter count changed".into())),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerParams;

    fn scalar(w: f64) -> LayerParams<f64> {
        LayerParams::new(Tensor::from_vec(vec![w]), Tensor::from_vec(vec![0.0]))
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(1.5);
        let mut opt = OptimizerState::new(AdamConfig::default());
        for _ in 0..5 {
            opt.step(&mut p).unwrap();
        }
        assert_eq!(p.weight.data(), &[1.5]);
        assert_eq!(opt.step, 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = 1, v_hat = 1 after bias correction: delta = lr / (1 + eps).
        let mut p = scalar(0.0);
        let mut opt = OptimizerState::new(AdamConfig { lr: 0.1, ..Default::default() });
        p.grad_weight.data_mut()[0] = 1.0;
        opt.step(&mut p).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.weight.data()[0] - expected).abs() < 1e-15);
        assert_eq!(p.grad_weight.data(), &[0.0]);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut p = scalar(0.0);
        let mut opt = OptimizerState::new(AdamConfig { lr: 0.01, ..Default::default() });
        let mut prev = 0.0;
        for i in 0..2000 {
            p.grad_weight.data_mut()[0] = -3.0;
            opt.step(&mut p).unwrap();
            let w = p.weight.data()[0];
            if i > 1000 {
                assert!(((w - prev) - 0.01).abs() < 1e-6);
            }
            prev = w;
        }
    }
}
