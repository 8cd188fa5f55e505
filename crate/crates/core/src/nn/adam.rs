use serde::{Deserialize, Serialize};

use super::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with bias-corrected moments. Moment buffers are created on the first
/// step and matched to parameters by position.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, m: Vec::new(), v: Vec::new(), steps: 0 }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates every trainable parameter from its accumulated gradient.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.steps += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let grad = p.grad.data().to_vec();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn param(values: &[f64]) -> Param {
        Param::new("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = param(&[0.5, -2.0]);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..10 {
            adam.step(&mut [&mut p]);
        }
        assert_eq!(p.value.data(), &[0.5, -2.0]);
        assert_eq!(adam.steps(), 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = param(&[1.0, 1.0, 1.0]);
        p.grad = Tensor::new(vec![3], vec![3.0, -0.01, 100.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut [&mut p]);
        let want = [1.0 - 1e-3, 1.0 + 1e-3, 1.0 - 1e-3];
        for (w, e) in p.value.data().iter().zip(want) {
            assert!((w - e).abs() < 1e-8, "{w} vs {e}");
        }
    }

    /// Scalar Adam written out independently of the optimizer.
    fn reference_adam(w0: f64, grad: impl Fn(f64) -> f64, lr: f64, steps: i32) -> f64 {
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        for t in 1..=steps {
            let g = grad(w);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            w -= lr * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        w
    }

    #[test]
    fn minimizes_squared_norm() {
        let lr = 0.05;
        let mut p = param(&[1.0, 1.0]);
        let mut adam = Adam::new(AdamConfig { learning_rate: lr, ..Default::default() });
        for _ in 0..200 {
            let g: Vec<f64> = p.value.data().iter().map(|w| 2.0 * w).collect();
            p.grad = Tensor::new(vec![2], g).unwrap();
            adam.step(&mut [&mut p]);
        }
        let norm = p.value.data().iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-2, "{norm}");
        let want = reference_adam(1.0, |w| 2.0 * w, lr, 200);
        for w in p.value.data() {
            assert!((w - want).abs() < 1e-12);
        }
    }

    #[test]
    fn buffers_are_skipped() {
        let mut p = Param::buffer("running_mean", Tensor::filled(&[2], 1.0));
        p.grad = Tensor::filled(&[2], 5.0);
        Adam::new(AdamConfig::default()).step(&mut [&mut p]);
        assert_eq!(p.value.data(), &[1.0, 1.0]);
    }
}
