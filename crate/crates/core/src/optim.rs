//! Adam with bias correction and no weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

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
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Matrix]) -> Self {
        AdamState {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// Extends the moments of parameter `idx` with zeros up to `len`; the
    /// existing prefix is kept.
    pub fn grow(&mut self, idx: usize, len: usize) {
        self.first[idx].resize(len, 0.0);
        self.second[idx].resize(len, 0.0);
    }

    pub fn moments(&self, idx: usize) -> (&[f64], &[f64]) {
        (&self.first[idx], &self.second[idx])
    }

    /// One Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), self.first.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.first[i].len() != p.len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::Divergence(format!("gradient of parameter {i} is not finite")));
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
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(grads: &[f64]) -> Vec<f64> {
        let mut p = Matrix::zeros(1, 3);
        let mut st = AdamState::new(AdamConfig::default(), &[&p]);
        let mut out = vec![];
        for &g in grads {
            let before = p.get(0, 0);
            st.step(&mut [&mut p], &[Matrix::filled(1, 3, g)]).unwrap();
            out.push(p.get(0, 0) - before);
        }
        out
    }

    #[test]
    fn first_step_is_minus_lr() {
        let d = run(&[1.0]);
        // m̂ = 1, v̂ = 1 → Δ = −lr / (1 + ε)
        assert!((d[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_noop() {
        assert_eq!(run(&[0.0]), vec![0.0]);
    }

    #[test]
    fn second_identical_step_is_bounded() {
        let d = run(&[1.0, 1.0]);
        assert!(d[1].abs() <= d[0].abs() * 1.001);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = Matrix::zeros(1, 1);
        let mut st = AdamState::new(AdamConfig::default(), &[&p]);
        let err = st.step(&mut [&mut p], &[Matrix::scalar(f64::NAN)]).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
        assert_eq!(st.step, 0);
    }
}
