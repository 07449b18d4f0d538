//! Adam optimizer over the flat parameter vector, with bias correction and
//! snapshot/restore for checkpointing.

use crate::error::{Error, Result};
use crate::model::{GradientVector, OptimizerSnapshot, PolicyParams};
use crate::scalar::{sc, Scalar};

#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    first_moment: Vec<S>,
    second_moment: Vec<S>,
    steps: u64,
}

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

impl<S: Scalar> Adam<S> {
    pub fn new(param_count: usize, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::InvalidConfig(format!(
                "adam betas must lie in [0, 1), got {beta1} and {beta2}"
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "adam epsilon must be positive, got {eps}"
            )));
        }
        Ok(Adam {
            beta1,
            beta2,
            eps,
            first_moment: vec![S::zero(); param_count],
            second_moment: vec![S::zero(); param_count],
            steps: 0,
        })
    }

    pub fn default_hyper(param_count: usize) -> Self {
        Self::new(param_count, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS)
            .expect("default hyperparameters are valid")
    }

    /// Number of updates applied so far (the bias-correction exponent).
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Zeroes both moment vectors and the step counter, as if freshly built.
    pub fn reset(&mut self) {
        self.first_moment.fill(S::zero());
        self.second_moment.fill(S::zero());
        self.steps = 0;
    }

    /// One descent update: parameters move against the gradient.
    pub fn step(&mut self, params: &mut PolicyParams<S>, grad: &GradientVector<S>, lr: f64) {
        assert_eq!(
            grad.len(),
            params.param_count(),
            "gradient/parameter length mismatch"
        );
        assert_eq!(grad.len(), self.first_moment.len(), "optimizer sized for another model");
        self.steps += 1;
        let t = self.steps as i32;
        let b1: S = sc(self.beta1);
        let b2: S = sc(self.beta2);
        let c1: S = sc(1.0 - self.beta1);
        let c2: S = sc(1.0 - self.beta2);
        let inv_bc1: S = sc(1.0 / (1.0 - self.beta1.powi(t)));
        let inv_bc2: S = sc(1.0 / (1.0 - self.beta2.powi(t)));
        let lr_s: S = sc(lr);
        let eps: S = sc(self.eps);
        let values = params.values_mut();
        for (((p, &g), m), v) in values
            .iter_mut()
            .zip(grad.values())
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = b1 * *m + c1 * g;
            *v = b2 * *v + c2 * g * g;
            let m_hat = *m * inv_bc1;
            let v_hat = *v * inv_bc2;
            *p = *p - lr_s * m_hat / (v_hat.sqrt() + eps);
        }
    }

    /// Moments and step counter as stored in checkpoints (32-bit).
    pub fn snapshot(&self) -> OptimizerSnapshot {
        OptimizerSnapshot {
            first_moment: self.first_moment.iter().map(|&m| m.to_f64() as f32).collect(),
            second_moment: self.second_moment.iter().map(|&v| v.to_f64() as f32).collect(),
            step: self.steps,
        }
    }

    /// Rebuilds optimizer state from a checkpoint section; hyperparameters
    /// are not stored there and must be supplied again.
    pub fn from_snapshot(
        snapshot: &OptimizerSnapshot,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Result<Self> {
        if snapshot.first_moment.len() != snapshot.second_moment.len() {
            return Err(Error::Checkpoint(
                "optimizer snapshot moment lengths disagree".into(),
            ));
        }
        let mut adam = Self::new(snapshot.first_moment.len(), beta1, beta2, eps)?;
        adam.first_moment = snapshot.first_moment.iter().map(|&m| S::from_f64(m as f64)).collect();
        adam.second_moment =
            snapshot.second_moment.iter().map(|&v| S::from_f64(v as f64)).collect();
        adam.steps = snapshot.step;
        Ok(adam)
    }

    /// True when both moment vectors are exactly zero and no step was taken.
    pub fn is_pristine(&self) -> bool {
        self.steps == 0
            && self.first_moment.iter().all(|&m| m == S::zero())
            && self.second_moment.iter().all(|&v| v == S::zero())
    }
}
