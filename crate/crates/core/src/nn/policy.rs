//! Tanh-squashed diagonal Gaussian policy head.
//!
//! The network emits `[mean (A values), log-std (A values)]`. Actions are
//! `center + half_range · tanh(mean + std · noise)`, and log-densities carry
//! the change-of-variables correction for both the tanh and the affine map.

use std::f64::consts::LN_2;

use thiserror::Error;

use super::DenseNet;
use crate::error::ShapeError;
use crate::types::ActionBounds;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
/// Keeps `atanh` finite for actions that saturated at a bound.
const SQUASH_EDGE: f64 = 1.0 - 1e-6;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("policy network produced a non-finite output")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicySample {
    pub pre_squash: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SquashedGaussian {
    center: Vec<f64>,
    half_range: Vec<f64>,
    log_half_range_sum: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 − tanh²(u))` without cancellation for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

fn clamped_log_std(raw: f64) -> (f64, bool) {
    if raw < LOG_STD_MIN {
        (LOG_STD_MIN, false)
    } else if raw > LOG_STD_MAX {
        (LOG_STD_MAX, false)
    } else {
        (raw, true)
    }
}

impl SquashedGaussian {
    pub fn new(bounds: &ActionBounds) -> Self {
        let center: Vec<f64> = bounds.lo.iter().zip(&bounds.hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let half_range: Vec<f64> = bounds.lo.iter().zip(&bounds.hi).map(|(l, h)| 0.5 * (h - l)).collect();
        let log_half_range_sum = half_range.iter().map(|h| h.ln()).sum();
        SquashedGaussian { center, half_range, log_half_range_sum }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn head_dim(&self) -> usize {
        2 * self.dim()
    }

    /// Reparameterised draw from a head output.
    pub fn sample(&self, head: &[f64], noise: &[f64]) -> PolicySample {
        let a = self.dim();
        let mut pre_squash = Vec::with_capacity(a);
        let mut action = Vec::with_capacity(a);
        let mut log_prob = -self.log_half_range_sum;
        for j in 0..a {
            let (ls, _) = clamped_log_std(head[a + j]);
            let u = head[j] + ls.exp() * noise[j];
            pre_squash.push(u);
            action.push(self.center[j] + self.half_range[j] * u.tanh());
            log_prob += -0.5 * noise[j] * noise[j] - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u);
        }
        PolicySample { pre_squash, action, log_prob }
    }

    /// Gradient with respect to the head of `d_action · action + d_logp · log_prob`
    /// along the reparameterised path, written into `out` (length `2A`).
    pub fn sample_grad(&self, head: &[f64], noise: &[f64], d_action: &[f64], d_logp: f64, out: &mut [f64]) {
        let a = self.dim();
        for j in 0..a {
            let (ls, active) = clamped_log_std(head[a + j]);
            let std = ls.exp();
            let u = head[j] + std * noise[j];
            let t = u.tanh();
            // ∂log_prob/∂u = 2·tanh(u) from the squash correction; the Gaussian
            // term is constant along the path except for −log std.
            let d_u = d_action[j] * self.half_range[j] * (1.0 - t * t) + d_logp * 2.0 * t;
            out[j] = d_u;
            out[a + j] = if active { d_u * std * noise[j] - d_logp } else { 0.0 };
        }
    }

    /// Log-density of a given in-bounds action.
    pub fn log_prob(&self, head: &[f64], action: &[f64]) -> f64 {
        let a = self.dim();
        let mut lp = -self.log_half_range_sum;
        for j in 0..a {
            let (ls, _) = clamped_log_std(head[a + j]);
            let z = ((action[j] - self.center[j]) / self.half_range[j]).clamp(-SQUASH_EDGE, SQUASH_EDGE);
            let u = z.atanh();
            let e = (u - head[j]) * (-ls).exp();
            lp += -0.5 * e * e - ls - HALF_LN_2PI - (1.0 - z * z).ln();
        }
        lp
    }

    /// `∂ log_prob(head, action) / ∂ head`, written into `out`.
    pub fn log_prob_grad(&self, head: &[f64], action: &[f64], out: &mut [f64]) {
        let a = self.dim();
        for j in 0..a {
            let (ls, active) = clamped_log_std(head[a + j]);
            let z = ((action[j] - self.center[j]) / self.half_range[j]).clamp(-SQUASH_EDGE, SQUASH_EDGE);
            let u = z.atanh();
            let inv_std = (-ls).exp();
            let e = (u - head[j]) * inv_std;
            out[j] = e * inv_std;
            out[a + j] = if active { e * e - 1.0 } else { 0.0 };
        }
    }

    /// Deterministic action `center + half_range·tanh(mean)`.
    pub fn mode(&self, head: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|j| self.center[j] + self.half_range[j] * head[j].tanh()).collect()
    }
}

fn head_for(net: &DenseNet, dist: &SquashedGaussian, obs: &[f64]) -> Result<Vec<f64>, PolicyError> {
    ShapeError::check("policy head width", dist.head_dim(), net.output_dim())?;
    let head = net.forward(obs)?;
    if head.iter().all(|h| h.is_finite()) {
        Ok(head)
    } else {
        Err(PolicyError::NonFinite)
    }
}

/// Runs the actor on a flat observation and draws an action with `noise`.
pub fn gaussian_policy_sample(
    net: &DenseNet,
    obs: &[f64],
    noise: &[f64],
    dist: &SquashedGaussian,
) -> Result<PolicySample, PolicyError> {
    ShapeError::check("policy noise", dist.dim(), noise.len())?;
    let head = head_for(net, dist, obs)?;
    Ok(dist.sample(&head, noise))
}

/// `log π(action | obs)` for an action taken earlier.
pub fn log_prob_of_action(
    net: &DenseNet,
    obs: &[f64],
    action: &[f64],
    dist: &SquashedGaussian,
) -> Result<f64, PolicyError> {
    ShapeError::check("action", dist.dim(), action.len())?;
    let head = head_for(net, dist, obs)?;
    Ok(dist.log_prob(&head, action))
}

/// `∂ log π(action | obs) / ∂ params`.
pub fn log_prob_of_action_grad(
    net: &DenseNet,
    obs: &[f64],
    action: &[f64],
    dist: &SquashedGaussian,
) -> Result<Vec<f64>, PolicyError> {
    let head = head_for(net, dist, obs)?;
    let mut dh = vec![0.0; dist.head_dim()];
    dist.log_prob_grad(&head, action, &mut dh);
    Ok(net.backward(obs, &dh)?)
}
