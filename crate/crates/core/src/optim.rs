//! Adaptive-moment (Adam) parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first_moment: Vec<Tensor2>,
    second_moment: Vec<Tensor2>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new<'p>(config: AdamConfig, params: impl IntoIterator<Item = &'p Tensor2>) -> Self {
        let first_moment: Vec<Tensor2> = params
            .into_iter()
            .map(|p| Tensor2::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            config,
            step: 0,
            second_moment: first_moment.clone(),
            first_moment,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Tensor2] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Tensor2] {
        &self.second_moment
    }

    /// One bias-corrected update of every parameter.
    pub fn update(&mut self, params: &mut [&mut Tensor2], grads: &[Tensor2]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::shape(format!(
                "adam got {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape(format!(
                    "adam param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(
            self.first_moment
                .iter_mut()
                .zip(self.second_moment.iter_mut()),
        ) {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor2::row(&[1.0, -2.0]);
        let mut state = AdamState::new(AdamConfig::default(), [&p]);
        state
            .update(&mut [&mut p], &[Tensor2::zeros(1, 2)])
            .unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so Δ = -lr·g/(|g| + ε).
        for g in [0.37, -5.0, 1e-3] {
            let mut p = Tensor2::row(&[0.0]);
            let cfg = AdamConfig {
                learning_rate: 0.01,
                ..Default::default()
            };
            let mut state = AdamState::new(cfg, [&p]);
            state.update(&mut [&mut p], &[Tensor2::row(&[g])]).unwrap();
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((p.data()[0] - expected).abs() < 1e-15);
            assert_eq!(p.data()[0].signum(), -g.signum());
        }
    }

    #[test]
    fn equal_gradients_update_identically() {
        let mut p = Tensor2::row(&[0.5, 0.5]);
        let mut state = AdamState::new(AdamConfig::default(), [&p]);
        for _ in 0..5 {
            state
                .update(&mut [&mut p], &[Tensor2::row(&[0.2, 0.2])])
                .unwrap();
        }
        assert_eq!(p.data()[0], p.data()[1]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor2::row(&[0.5, 0.5]);
        let mut state = AdamState::new(AdamConfig::default(), [&p]);
        let err = state.update(&mut [&mut p], &[Tensor2::row(&[0.2])]);
        assert!(matches!(err, Err(Error::Shape(_))));
        assert_eq!(state.step(), 0);
    }

    #[test]
    fn moments_start_at_zero() {
        let p = Tensor2::filled(3, 2, 4.0);
        let state = AdamState::new(AdamConfig::default(), [&p]);
        assert_eq!(state.step(), 0);
        assert!(state.first_moment()[0].data().iter().all(|&v| v == 0.0));
        assert!(state.second_moment()[0].data().iter().all(|&v| v == 0.0));
    }
}
