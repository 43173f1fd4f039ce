//! Learning-rate annealing, adversarial-weight ramp and SGD with momentum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub eta0: f64,
    pub theta: f64,
    pub beta: f64,
    pub delta: f64,
    pub total_epochs: usize,
    pub momentum: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            eta0: 0.01,
            theta: 10.0,
            beta: 0.75,
            delta: 10.0,
            total_epochs: 30,
            momentum: 0.9,
        }
    }
}

fn check_progress(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Contract(format!("training progress must be in [0, 1], got {p}")))
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("schedule.{what}")));
        if !(self.eta0 > 0.0) || !self.eta0.is_finite() {
            return bad("eta0 must be > 0");
        }
        if !(self.theta >= 0.0) {
            return bad("theta must be >= 0");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be >= 0");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        Ok(())
    }

    /// `η_p = η₀ / (1 + θp)^β`.
    pub fn lr_at(&self, p: f64) -> Result<f64> {
        check_progress(p)?;
        Ok(self.eta0 / (1.0 + self.theta * p).powf(self.beta))
    }

    /// `λ_d = (1 − e^{−δp}) / (1 + e^{−δp})`, ramping from 0 toward 1.
    pub fn lambda_at(&self, p: f64) -> Result<f64> {
        check_progress(p)?;
        let e = (-self.delta * p).exp();
        Ok((1.0 - e) / (1.0 + e))
    }

    /// Normalized progress at the start of `epoch`.
    pub fn progress(&self, epoch: usize) -> f64 {
        if self.total_epochs == 0 {
            0.0
        } else {
            (epoch as f64 / self.total_epochs as f64).min(1.0)
        }
    }
}

/// Classic momentum: `v ← μ·v + g`, `θ ← θ − η·v`. Buffers start at zero
/// and are created on first use. Each parameter is replaced by a fresh leaf.
pub fn sgd_momentum_step(
    params: Vec<&mut Tensor>,
    grads: &[Vec<f64>],
    buffers: &mut Vec<Vec<f64>>,
    momentum: f64,
    eta: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    if buffers.is_empty() {
        *buffers = params.iter().map(|p| vec![0.0; p.numel()]).collect();
    }
    if buffers.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} momentum buffers for {} parameters",
            buffers.len(),
            params.len()
        )));
    }
    for ((param, grad), buf) in params.into_iter().zip(grads).zip(buffers.iter_mut()) {
        if grad.len() != param.numel() || buf.len() != param.numel() {
            return Err(Error::shape(
                "sgd_momentum_step",
                param.shape(),
                &[grad.len(), buf.len()],
            ));
        }
        for (v, g) in buf.iter_mut().zip(grad) {
            *v = momentum * *v + g;
        }
        let updated = param.data().iter().zip(buf.iter()).map(|(w, v)| w - eta * v).collect();
        *param = param.with_data(updated)?;
    }
    Ok(())
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}
