use crate::types::Transition;

/// On-policy transitions for one update, in the order they were produced.
#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    horizon: usize,
    transitions: Vec<Transition>,
}

impl RolloutBuffer {
    pub fn new(horizon: usize) -> Self {
        assert!(horizon > 0);
        RolloutBuffer { horizon, transitions: Vec::with_capacity(horizon) }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.transitions.len() >= self.horizon
    }

    /// Appends a transition; returns `true` once the horizon is reached.
    pub fn push(&mut self, t: Transition) -> bool {
        self.transitions.push(t);
        self.is_full()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
    }

    /// `true` where transition `t + 1` directly follows `t` in the same episode.
    pub fn continues(&self) -> Vec<bool> {
        let ts = &self.transitions;
        (0..ts.len())
            .map(|t| {
                t + 1 < ts.len()
                    && !ts[t].done
                    && ts[t + 1].episode_id == ts[t].episode_id
                    && ts[t + 1].step_index == ts[t].step_index + 1
            })
            .collect()
    }
}

/// GAE(λ): `A_t = δ_t + γλ·A_{t+1}` inside an episode, with
/// `δ_t = r_t + γ(1−done_t)·V(s_{t+1}) − V(s_t)`.
///
/// The recursion restarts wherever `continues[t]` is false; a cut that is
/// not terminal still bootstraps from `next_values[t]` through `δ_t`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    continues: &[bool],
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    assert!(values.len() == n && next_values.len() == n && dones.len() == n && continues.len() == n);
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * mask * next_values[t] - values[t];
        let carry = if continues[t] { gamma * lambda * next } else { 0.0 };
        adv[t] = delta + carry;
        next = adv[t];
    }
    adv
}

/// Zero mean, unit variance; left untouched when the batch has no spread.
pub fn normalize(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return;
    }
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}
