//! Row-major arrays gathered from transitions, the input format of every loss.

use crate::error::ShapeError;
use crate::types::{ObsLayout, Transition};

#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub len: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub dones: Vec<f64>,
    pub behavior_log_probs: Vec<f64>,
}

impl Minibatch {
    pub fn from_transitions<'a, I>(transitions: I, layout: &ObsLayout) -> Result<Self, ShapeError>
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let d = layout.flat_len();
        let a = layout.action_dim;
        let mut mb = Minibatch {
            len: 0,
            obs_dim: d,
            action_dim: a,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
            behavior_log_probs: Vec::new(),
        };
        for t in transitions {
            ShapeError::check("transition action", a, t.action.values.len())?;
            let o = mb.obs.len();
            mb.obs.resize(o + d, 0.0);
            t.obs.flatten_into(layout, &mut mb.obs[o..])?;
            mb.next_obs.resize(o + d, 0.0);
            t.next_obs.flatten_into(layout, &mut mb.next_obs[o..])?;
            mb.actions.extend_from_slice(&t.action.values);
            mb.rewards.push(t.reward);
            mb.dones.push(if t.done { 1.0 } else { 0.0 });
            mb.behavior_log_probs.push(t.behavior_log_prob);
            mb.len += 1;
        }
        Ok(mb)
    }

    pub fn obs_row(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn next_obs_row(&self, i: usize) -> &[f64] {
        &self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn action_row(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    /// Rows `idx` of this batch, in the given order.
    pub fn select(&self, idx: &[usize]) -> Minibatch {
        let mut mb = Minibatch {
            len: idx.len(),
            obs_dim: self.obs_dim,
            action_dim: self.action_dim,
            obs: Vec::with_capacity(idx.len() * self.obs_dim),
            actions: Vec::with_capacity(idx.len() * self.action_dim),
            rewards: Vec::with_capacity(idx.len()),
            next_obs: Vec::with_capacity(idx.len() * self.obs_dim),
            dones: Vec::with_capacity(idx.len()),
            behavior_log_probs: Vec::with_capacity(idx.len()),
        };
        for &i in idx {
            mb.obs.extend_from_slice(self.obs_row(i));
            mb.next_obs.extend_from_slice(self.next_obs_row(i));
            mb.actions.extend_from_slice(self.action_row(i));
            mb.rewards.push(self.rewards[i]);
            mb.dones.push(self.dones[i]);
            mb.behavior_log_probs.push(self.behavior_log_probs[i]);
        }
        mb
    }
}

/// Rows of `[obs | action]`, the critic input.
pub(crate) fn concat_rows(left: &[f64], left_w: usize, right: &[f64], right_w: usize, rows: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * (left_w + right_w));
    for i in 0..rows {
        out.extend_from_slice(&left[i * left_w..(i + 1) * left_w]);
        out.extend_from_slice(&right[i * right_w..(i + 1) * right_w]);
    }
    out
}
