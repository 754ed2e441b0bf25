//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Adam {
            config,
            step: 0,
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    ///
    /// Tensors must be passed in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Tensor]) {
        assert_eq!(
            params.len(),
            self.first_moment.len(),
            "optimizer was built for a different parameter list"
        );
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let grads = p.grad().to_vec();
            for (i, g) in grads.iter().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data_mut()[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut w = Tensor::vector(vec![1.0, -2.0]).with_grad();
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        adam.step(&mut [&mut w]);
        assert_eq!(w.data(), &[1.0, -2.0]);
    }

    #[test]
    fn one_step_descends_square() {
        let mut w = Tensor::scalar(1.0).with_grad();
        let mut adam = Adam::new(AdamConfig::default(), &[1]);
        w.grad_mut()[0] = 2.0 * w.item();
        adam.step(&mut [&mut w]);
        assert!(w.item().abs() < 1.0);
        assert_eq!(w.grad(), &[0.0]);
    }

    #[test]
    fn converges_on_quadratic() {
        // f(x, y) = (x - 3)^2 + 10 (y + 1)^2, minimiser (3, -1)
        let mut w = Tensor::vector(vec![0.0, 0.0]).with_grad();
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        for _ in 0..5000 {
            let (x, y) = (w.data()[0], w.data()[1]);
            w.grad_mut().copy_from_slice(&[2.0 * (x - 3.0), 20.0 * (y + 1.0)]);
            adam.step(&mut [&mut w]);
        }
        assert!((w.data()[0] - 3.0).abs() < 1e-3, "{:?}", w.data());
        assert!((w.data()[1] + 1.0).abs() < 1e-3, "{:?}", w.data());
    }
}
