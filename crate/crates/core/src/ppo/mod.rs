//! PPO with the clipped surrogate, GAE(λ) advantages and a separate value
//! network. Updates run inside the learner-interface process once the rollout
//! buffer holds a full horizon.

mod rollout;

use rand::seq::SliceRandom;
use rand::Rng;

pub use rollout::{gae, normalize, RolloutBuffer};

use crate::batch::Minibatch;
use crate::error::{Error, ShapeError};
use crate::nn::{adam_step, Activation, AdamConfig, DenseNet, OptimizerState, SquashedGaussian, StepOutcome};
use crate::types::{quantize_slice, ActionBounds, ObsLayout, PolicySnapshot};

#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub actor_lr: f64,
    pub value_lr: f64,
    /// Multiplies rewards before advantage and value-target computation.
    pub reward_scale: f64,
    /// Stop ticking the environment while an update is in flight.
    pub pause_during_update: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            hidden: vec![64, 64],
            hidden_activation: Activation::Tanh,
            clip: 0.2,
            epochs: 10,
            minibatch_size: 64,
            lambda: 0.95,
            gamma: 1.0,
            horizon: 2048,
            actor_lr: 3e-4,
            value_lr: 1e-3,
            reward_scale: 1.0,
            pause_during_update: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config(format!("ppo.clip must lie in (0, 1), got {}", self.clip)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("ppo.lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("ppo.gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.horizon == 0 {
            return Err(Error::Config("ppo.epochs, ppo.minibatch and ppo.horizon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpoParams {
    pub actor: DenseNet,
    pub value_net: DenseNet,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub reward_scale: f64,
    pub policy: SquashedGaussian,
}

pub fn value_shape(obs_dim: usize, hidden: &[usize]) -> Vec<usize> {
    std::iter::once(obs_dim).chain(hidden.iter().copied()).chain(std::iter::once(1)).collect()
}

impl PpoParams {
    pub fn new<R: Rng + ?Sized>(layout: &ObsLayout, bounds: &ActionBounds, cfg: &PpoConfig, rng: &mut R) -> Self {
        let d = layout.flat_len();
        let shape = crate::sac::actor_shape(d, layout.action_dim, &cfg.hidden);
        let mut actor = DenseNet::mlp(&shape, cfg.hidden_activation, rng);
        let mut p = actor.params();
        quantize_slice(&mut p);
        actor.set_params(&p).expect("same shape");
        PpoParams {
            actor,
            value_net: DenseNet::mlp(&value_shape(d, &cfg.hidden), cfg.hidden_activation, rng),
            clip: cfg.clip,
            epochs: cfg.epochs,
            minibatch_size: cfg.minibatch_size,
            lambda: cfg.lambda,
            gamma: cfg.gamma,
            reward_scale: cfg.reward_scale,
            policy: SquashedGaussian::new(bounds),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.policy.dim()
    }
}

/// `min(ρ·H, clip(ρ, 1−ε, 1+ε)·H)`.
pub fn clip_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Normalised advantages and (unnormalised) value targets for one buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Advantages {
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Value estimates are taken with the value network as it stands at the start
/// of the update.
pub fn compute_advantages(buffer: &RolloutBuffer, batch: &Minibatch, params: &PpoParams) -> Result<Advantages, ShapeError> {
    let n = batch.len;
    ShapeError::check("rollout batch", buffer.len(), n)?;
    let values = params.value_net.forward_batch(&batch.obs, n)?.output().to_vec();
    let next_values = params.value_net.forward_batch(&batch.next_obs, n)?.output().to_vec();
    let rewards: Vec<f64> = batch.rewards.iter().map(|r| r * params.reward_scale).collect();
    let dones: Vec<bool> = batch.dones.iter().map(|&d| d != 0.0).collect();
    let raw = gae(&rewards, &values, &next_values, &dones, &buffer.continues(), params.gamma, params.lambda);
    let targets = raw.iter().zip(&values).map(|(a, v)| a + v).collect();
    let mut advantages = raw;
    normalize(&mut advantages);
    Ok(Advantages { advantages, targets })
}

#[derive(Clone, Debug)]
pub struct PpoLoss {
    /// `policy_loss + value_loss`.
    pub loss: f64,
    /// Negated mean clipped surrogate.
    pub policy_loss: f64,
    /// Mean of `½(V(s) − target)²`.
    pub value_loss: f64,
    pub actor_grad: Vec<f64>,
    pub value_grad: Vec<f64>,
    pub clip_fraction: f64,
}

/// Loss and gradients on one minibatch. Behaviour log-probabilities come from
/// the batch; the current ones from `params.actor`.
pub fn ppo_loss(params: &PpoParams, batch: &Minibatch, advantages: &[f64], targets: &[f64]) -> Result<PpoLoss, ShapeError> {
    let n = batch.len;
    let a = params.action_dim();
    ShapeError::check("advantages", n, advantages.len())?;
    ShapeError::check("value targets", n, targets.len())?;
    let inv_n = 1.0 / n as f64;

    let trace = params.actor.forward_batch(&batch.obs, n)?;
    let heads = trace.output();
    let mut head_grad = vec![0.0; n * 2 * a];
    let mut surrogate = 0.0;
    let mut clipped = 0usize;
    for i in 0..n {
        let head = &heads[i * 2 * a..(i + 1) * 2 * a];
        let action = batch.action_row(i);
        let ratio = (params.policy.log_prob(head, action) - batch.behavior_log_probs[i]).exp();
        let adv = advantages[i];
        surrogate += clip_surrogate(ratio, adv, params.clip);
        // The unclipped branch carries the gradient; the clipped one is flat.
        if ratio * adv <= ratio.clamp(1.0 - params.clip, 1.0 + params.clip) * adv {
            let out = &mut head_grad[i * 2 * a..(i + 1) * 2 * a];
            params.policy.log_prob_grad(head, action, out);
            let scale = -adv * ratio * inv_n;
            out.iter_mut().for_each(|g| *g *= scale);
        } else {
            clipped += 1;
        }
    }
    let mut actor_grad = vec![0.0; params.actor.param_count()];
    params.actor.backward_batch(&trace, &head_grad, Some(&mut actor_grad), None)?;

    let vt = params.value_net.forward_batch(&batch.obs, n)?;
    let diff: Vec<f64> = vt.output().iter().zip(targets).map(|(v, y)| v - y).collect();
    let value_loss = diff.iter().map(|d| 0.5 * d * d).sum::<f64>() * inv_n;
    let og: Vec<f64> = diff.iter().map(|d| d * inv_n).collect();
    let mut value_grad = vec![0.0; params.value_net.param_count()];
    params.value_net.backward_batch(&vt, &og, Some(&mut value_grad), None)?;

    let policy_loss = -surrogate * inv_n;
    Ok(PpoLoss {
        loss: policy_loss + value_loss,
        policy_loss,
        value_loss,
        actor_grad,
        value_grad,
        clip_fraction: clipped as f64 * inv_n,
    })
}

/// Parameters plus optimizer state for the single PPO update task.
#[derive(Clone, Debug)]
pub struct PpoLearner {
    pub params: PpoParams,
    pub config: PpoConfig,
    actor_opt: OptimizerState,
    value_opt: OptimizerState,
    version: u64,
    layout: ObsLayout,
    last_loss: Option<f64>,
}

impl PpoLearner {
    pub fn new(params: PpoParams, config: PpoConfig, layout: ObsLayout) -> Self {
        PpoLearner {
            actor_opt: OptimizerState::new(params.actor.param_count(), AdamConfig::with_lr(config.actor_lr)),
            value_opt: OptimizerState::new(params.value_net.param_count(), AdamConfig::with_lr(config.value_lr)),
            params,
            config,
            version: 0,
            layout,
            last_loss: None,
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mean total loss over the minibatches of the last update.
    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot::from_f64(self.version, &self.params.actor.params())
    }
}

/// `epochs` passes over shuffled minibatches of the buffer, then a new
/// snapshot. The buffer is cleared either way; on a non-finite loss the
/// parameters are left as they were before the update.
pub fn ppo_update<R: Rng + ?Sized>(learner: &mut PpoLearner, buffer: &mut RolloutBuffer, rng: &mut R) -> Result<PolicySnapshot, Error> {
    let result = run_epochs(learner, buffer, rng);
    buffer.clear();
    result?;
    learner.version += 1;
    Ok(learner.snapshot())
}

fn run_epochs<R: Rng + ?Sized>(learner: &mut PpoLearner, buffer: &RolloutBuffer, rng: &mut R) -> Result<(), Error> {
    let batch = Minibatch::from_transitions(buffer.transitions(), &learner.layout)?;
    let adv = compute_advantages(buffer, &batch, &learner.params)?;
    let saved = (learner.params.clone(), learner.actor_opt.clone(), learner.value_opt.clone());
    let mut order: Vec<usize> = (0..batch.len).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..learner.params.epochs {
        order.shuffle(rng);
        for idx in order.chunks(learner.params.minibatch_size) {
            let mb = batch.select(idx);
            let a: Vec<f64> = idx.iter().map(|&i| adv.advantages[i]).collect();
            let y: Vec<f64> = idx.iter().map(|&i| adv.targets[i]).collect();
            let l = ppo_loss(&learner.params, &mb, &a, &y)?;
            if !l.loss.is_finite() {
                (learner.params, learner.actor_opt, learner.value_opt) = saved;
                return Err(Error::NonFinite("ppo loss"));
            }
            total += l.loss;
            count += 1;
            let mut p = learner.params.actor.params();
            if adam_step(&mut p, &l.actor_grad, &mut learner.actor_opt)? == StepOutcome::Applied {
                quantize_slice(&mut p);
                learner.params.actor.set_params(&p)?;
            }
            let mut v = learner.params.value_net.params();
            if adam_step(&mut v, &l.value_grad, &mut learner.value_opt)? == StepOutcome::Applied {
                learner.params.value_net.set_params(&v)?;
            }
        }
    }
    learner.last_loss = Some(total / count.max(1) as f64);
    Ok(())
}
