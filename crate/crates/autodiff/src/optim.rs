//! Adam with bias correction.

use crate::error::{AutodiffError, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Moment buffers for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter in place.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(AutodiffError::Contract(format!(
                "adam: {} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(AutodiffError::Shape {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &g), (m, v)) in it {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = vec![Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap()];
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        for _ in 0..5 {
            adam.step(&mut params, &[Matrix::zeros(1, 2)]).unwrap();
        }
        assert_eq!(params[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g² at t = 1, so the step is lr·g/(|g| + ε).
        let mut params = vec![Matrix::scalar(0.5)];
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        adam.step(&mut params, &[Matrix::scalar(1.0)]).unwrap();
        let expected = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((params[0].item() - expected).abs() < 1e-15);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn identical_parameters_update_identically() {
        let mut params = vec![Matrix::scalar(0.3), Matrix::scalar(0.3)];
        let mut adam = AdamState::new(AdamConfig::with_lr(0.01), &params);
        for k in 0..10 {
            let g = Matrix::scalar((k as f64).sin());
            adam.step(&mut params, &[g.clone(), g]).unwrap();
        }
        assert_eq!(params[0], params[1]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut params = vec![Matrix::zeros(2, 2)];
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        assert!(adam.step(&mut params, &[Matrix::zeros(1, 2)]).is_err());
    }
}
