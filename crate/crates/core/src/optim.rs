//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{shape_err, LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.eps > 0.0) {
            return Err(LabError::Config("Adam lr and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(LabError::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub hyper: AdamConfig,
}

impl AdamState {
    /// Fresh state with zero moments shaped like `params`.
    pub fn new<'a>(hyper: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        hyper.validate()?;
        let first_moment: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        let second_moment = first_moment.clone();
        Ok(Self { step_count: 0, first_moment, second_moment, hyper })
    }

    /// One update. Nothing is modified if any gradient is malformed or non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(shape_err(
                "adam_step",
                format!("{} parameter tensors", self.first_moment.len()),
                format!("{} params, {} grads", params.len(), grads.len()),
            ));
        }
        for (i, ((p, g), m)) in params.iter().zip(grads).zip(&self.first_moment).enumerate() {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(shape_err("adam_step", format!("{:?}", m.shape()), format!("{:?} at tensor {i}", g.shape())));
            }
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(LabError::NonFinite { context: format!("gradient of parameter tensor {i}") });
            }
        }

        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.hyper;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let iter = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
            for (((theta, &g), m), v) in iter {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64) -> AdamConfig {
        AdamConfig { lr, ..AdamConfig::default() }
    }

    #[test]
    fn first_step_hand_example() {
        let mut theta = Tensor::scalar(1.0);
        let mut s = AdamState::new(cfg(0.1), [&theta]).unwrap();
        s.step(&mut [&mut theta], &[Tensor::scalar(0.5)]).unwrap();
        // m_hat = 0.5, v_hat = 0.25, update = 0.1 * 0.5 / (0.5 + 1e-8)
        let expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert_eq!(theta.data()[0], expected);
        assert!((theta.data()[0] - 0.9).abs() < 1e-7);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut theta = Tensor::vector(vec![1.0, -2.0]).unwrap();
        let mut s = AdamState::new(cfg(0.1), [&theta]).unwrap();
        s.step(&mut [&mut theta], &[Tensor::zeros(vec![2])]).unwrap();
        assert_eq!(theta.data(), &[1.0, -2.0]);
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut theta = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let mut s = AdamState::new(cfg(0.1), [&theta]).unwrap();
        let bad = Tensor::vector(vec![0.1, f64::NAN]).unwrap();
        assert!(matches!(s.step(&mut [&mut theta], &[bad]), Err(LabError::NonFinite { .. })));
        assert_eq!(theta.data(), &[1.0, 2.0]);
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut theta = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let mut s = AdamState::new(cfg(0.1), [&theta]).unwrap();
        assert!(s.step(&mut [&mut theta], &[Tensor::zeros(vec![3])]).is_err());
        assert!(s.step(&mut [&mut theta], &[]).is_err());
    }

    #[test]
    fn quadratic_smoke_convergence() {
        let mut theta = Tensor::scalar(1.0);
        let mut s = AdamState::new(cfg(0.05), [&theta]).unwrap();
        let mut reached = None;
        for step in 1..=200 {
            let g = Tensor::scalar(2.0 * theta.data()[0]);
            s.step(&mut [&mut theta], &[g]).unwrap();
            if theta.data()[0].abs() < 0.05 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "theta = {}", theta.data()[0]);
    }

    #[test]
    fn identical_sequences_identical_trajectories() {
        let run = || {
            let mut theta = Tensor::vector(vec![0.3, -0.7, 1.1]).unwrap();
            let mut s = AdamState::new(cfg(0.01), [&theta]).unwrap();
            let mut traj = Vec::new();
            for k in 0..50 {
                let g: Vec<f64> = theta.data().iter().map(|t| t.sin() + k as f64 * 0.01).collect();
                s.step(&mut [&mut theta], &[Tensor::vector(g).unwrap()]).unwrap();
                traj.push(theta.clone());
            }
            (traj, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bad_hyperparameters() {
        assert!(AdamConfig { beta1: 1.0, ..AdamConfig::default() }.validate().is_err());
        assert!(AdamConfig { lr: 0.0, ..AdamConfig::default() }.validate().is_err());
    }
}
