//! Soft actor-critic with twin critics, fixed temperature and Polyak-averaged
//! target critics, split into the replay-buffer and update-worker roles.
//!
//! Losses are evaluated on explicit noise so they are pure functions of
//! parameters and inputs. The discount is fixed at 1 (undiscounted episodic
//! returns); bootstrapping is masked on terminal transitions.

mod replay;
mod throttle;

use rand::Rng;
use rand_distr::StandardNormal;

pub use replay::{NotReady, ReplayBuffer};
pub use throttle::{ThrottleMode, UpdateThrottle};

use crate::batch::{concat_rows, Minibatch};
use crate::error::{Error, ShapeError};
use crate::nn::{adam_step, Activation, AdamConfig, DenseNet, OptimizerState, SquashedGaussian, StepOutcome};
use crate::types::{quantize_slice, ActionBounds, ObsLayout, PolicySnapshot, Transition};

pub const GAMMA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub alpha: f64,
    pub tau: f64,
    pub minibatch_size: usize,
    pub buffer_capacity: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    /// One critic without the min-backup.
    pub single_critic: bool,
    pub learn_alpha: bool,
    /// Multiplies rewards inside the critic target only.
    pub reward_scale: f64,
    /// Uniform-random actions for this many initial environment steps.
    pub warmup_steps: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: vec![64, 64],
            hidden_activation: Activation::Relu,
            alpha: 0.2,
            tau: 0.005,
            minibatch_size: 64,
            buffer_capacity: 16_000,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            single_critic: false,
            learn_alpha: false,
            reward_scale: 1.0,
            warmup_steps: 0,
        }
    }
}

/// Actor, online critics and their targets.
#[derive(Clone, Debug, PartialEq)]
pub struct SacParams {
    pub actor: DenseNet,
    pub critics: Vec<DenseNet>,
    pub target_critics: Vec<DenseNet>,
    pub alpha: f64,
    pub tau: f64,
    pub minibatch_size: usize,
    pub reward_scale: f64,
    pub policy: SquashedGaussian,
}

pub fn actor_shape(obs_dim: usize, action_dim: usize, hidden: &[usize]) -> Vec<usize> {
    std::iter::once(obs_dim).chain(hidden.iter().copied()).chain(std::iter::once(2 * action_dim)).collect()
}

pub fn critic_shape(obs_dim: usize, action_dim: usize, hidden: &[usize]) -> Vec<usize> {
    std::iter::once(obs_dim + action_dim).chain(hidden.iter().copied()).chain(std::iter::once(1)).collect()
}

impl SacParams {
    pub fn new<R: Rng + ?Sized>(layout: &ObsLayout, bounds: &ActionBounds, cfg: &SacConfig, rng: &mut R) -> Self {
        let d = layout.flat_len();
        let a = layout.action_dim;
        let mut actor = DenseNet::mlp(&actor_shape(d, a, &cfg.hidden), cfg.hidden_activation, rng);
        // Actors start (and stay) at wire precision.
        let mut p = actor.params();
        quantize_slice(&mut p);
        actor.set_params(&p).expect("same shape");
        let n_critics = if cfg.single_critic { 1 } else { 2 };
        let critics: Vec<DenseNet> = (0..n_critics)
            .map(|_| DenseNet::mlp(&critic_shape(d, a, &cfg.hidden), cfg.hidden_activation, rng))
            .collect();
        SacParams {
            actor,
            target_critics: critics.clone(),
            critics,
            alpha: cfg.alpha,
            tau: cfg.tau,
            minibatch_size: cfg.minibatch_size,
            reward_scale: cfg.reward_scale,
            policy: SquashedGaussian::new(bounds),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.policy.dim()
    }
}

/// Draws `rows × action_dim` standard normals.
pub fn normal_noise<R: Rng + ?Sized>(rows: usize, action_dim: usize, rng: &mut R) -> Vec<f64> {
    (0..rows * action_dim).map(|_| rng.sample(StandardNormal)).collect()
}

struct ActorPass {
    trace: crate::nn::Trace,
    actions: Vec<f64>,
    log_probs: Vec<f64>,
}

fn actor_pass(params: &SacParams, obs: &[f64], rows: usize, noise: &[f64]) -> Result<ActorPass, ShapeError> {
    let a = params.action_dim();
    ShapeError::check("policy noise", rows * a, noise.len())?;
    let trace = params.actor.forward_batch(obs, rows)?;
    let heads = trace.output();
    let mut actions = Vec::with_capacity(rows * a);
    let mut log_probs = Vec::with_capacity(rows);
    for i in 0..rows {
        let s = params.policy.sample(&heads[i * 2 * a..(i + 1) * 2 * a], &noise[i * a..(i + 1) * a]);
        actions.extend_from_slice(&s.action);
        log_probs.push(s.log_prob);
    }
    Ok(ActorPass { trace, actions, log_probs })
}

/// Row-wise minimum over a set of critics; also returns the argmin critic.
fn min_q(nets: &[DenseNet], input: &[f64], rows: usize) -> Result<(Vec<f64>, Vec<usize>, Vec<crate::nn::Trace>), ShapeError> {
    let traces: Vec<_> = nets.iter().map(|n| n.forward_batch(input, rows)).collect::<Result<_, _>>()?;
    let mut q = vec![f64::INFINITY; rows];
    let mut arg = vec![0; rows];
    for (c, tr) in traces.iter().enumerate() {
        for (i, &v) in tr.output().iter().enumerate() {
            if v < q[i] {
                q[i] = v;
                arg[i] = c;
            }
        }
    }
    Ok((q, arg, traces))
}

fn soft_values(params: &SacParams, next_obs: &[f64], rows: usize, noise: &[f64]) -> Result<Vec<f64>, ShapeError> {
    let pass = actor_pass(params, next_obs, rows, noise)?;
    let input = concat_rows(next_obs, params.obs_dim(), &pass.actions, params.action_dim(), rows);
    let (q, _, _) = min_q(&params.target_critics, &input, rows)?;
    Ok(q.iter().zip(&pass.log_probs).map(|(q, lp)| q - params.alpha * lp).collect())
}

/// `min_i Q̃_i(s′, a′) − α·log π(a′|s′)` with `a′` drawn from the current actor.
pub fn soft_value(params: &SacParams, next_obs: &[f64], noise: &[f64]) -> Result<f64, ShapeError> {
    Ok(soft_values(params, next_obs, 1, noise)?[0])
}

#[derive(Clone, Debug)]
pub struct CriticLoss {
    pub loss: f64,
    /// One gradient per online critic.
    pub grads: Vec<Vec<f64>>,
}

/// Mean over critics and batch of `½(r + γ(1−done)·V(s′) − Q(s, a))²`.
///
/// The target is computed with the target critics and treated as a constant.
pub fn critic_loss(params: &SacParams, batch: &Minibatch, noise: &[f64]) -> Result<CriticLoss, ShapeError> {
    let n = batch.len;
    let v = soft_values(params, &batch.next_obs, n, noise)?;
    let targets: Vec<f64> = (0..n)
        .map(|i| params.reward_scale * batch.rewards[i] + GAMMA * (1.0 - batch.dones[i]) * v[i])
        .collect();
    let input = concat_rows(&batch.obs, batch.obs_dim, &batch.actions, batch.action_dim, n);
    let n_critics = params.critics.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(params.critics.len());
    for critic in &params.critics {
        let tr = critic.forward_batch(&input, n)?;
        let diff: Vec<f64> = tr.output().iter().zip(&targets).map(|(q, y)| q - y).collect();
        loss += diff.iter().map(|d| 0.5 * d * d).sum::<f64>() / (n as f64 * n_critics);
        let og: Vec<f64> = diff.iter().map(|d| d / (n as f64 * n_critics)).collect();
        let mut g = vec![0.0; critic.param_count()];
        critic.backward_batch(&tr, &og, Some(&mut g), None)?;
        grads.push(g);
    }
    Ok(CriticLoss { loss, grads })
}

#[derive(Clone, Debug)]
pub struct ActorLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub mean_log_prob: f64,
}

/// Mean of `α·log π(a|s) − min_i Q_i(s, a)` over reparameterised actions.
/// Only the actor receives a gradient.
pub fn actor_loss(params: &SacParams, batch: &Minibatch, noise: &[f64]) -> Result<ActorLoss, ShapeError> {
    let n = batch.len;
    let a = params.action_dim();
    let d = params.obs_dim();
    let pass = actor_pass(params, &batch.obs, n, noise)?;
    let input = concat_rows(&batch.obs, d, &pass.actions, a, n);
    let (q, arg, traces) = min_q(&params.critics, &input, n)?;
    let mean_log_prob = pass.log_probs.iter().sum::<f64>() / n as f64;
    let loss = params.alpha * mean_log_prob - q.iter().sum::<f64>() / n as f64;

    let mut d_action = vec![0.0; n * a];
    for (c, (critic, tr)) in params.critics.iter().zip(&traces).enumerate() {
        let og: Vec<f64> = arg.iter().map(|&k| if k == c { -1.0 / n as f64 } else { 0.0 }).collect();
        if og.iter().all(|&g| g == 0.0) {
            continue;
        }
        let mut dq_da = vec![0.0; n * a];
        critic.backward_batch(tr, &og, None, Some((&mut dq_da, d)))?;
        d_action.iter_mut().zip(&dq_da).for_each(|(x, y)| *x += y);
    }

    let heads = pass.trace.output();
    let mut head_grad = vec![0.0; n * 2 * a];
    for i in 0..n {
        params.policy.sample_grad(
            &heads[i * 2 * a..(i + 1) * 2 * a],
            &noise[i * a..(i + 1) * a],
            &d_action[i * a..(i + 1) * a],
            params.alpha / n as f64,
            &mut head_grad[i * 2 * a..(i + 1) * 2 * a],
        );
    }
    let mut grad = vec![0.0; params.actor.param_count()];
    params.actor.backward_batch(&pass.trace, &head_grad, Some(&mut grad), None)?;
    Ok(ActorLoss { loss, grad, mean_log_prob })
}

/// `θ̃ ← (1−τ)·θ̃ + τ·θ` for every target critic.
pub fn polyak_update(params: &mut SacParams) {
    let tau = params.tau;
    for (target, online) in params.target_critics.iter_mut().zip(&params.critics) {
        target.zip_params_mut(online, |t, o| *t = (1.0 - tau) * *t + tau * o);
    }
}

/// Parameters plus optimizer state; owned by exactly one update worker.
#[derive(Clone, Debug)]
pub struct SacLearner {
    pub params: SacParams,
    pub config: SacConfig,
    actor_opt: OptimizerState,
    critic_opts: Vec<OptimizerState>,
    log_alpha: f64,
    alpha_opt: OptimizerState,
    version: u64,
    updates: u64,
    skipped: u64,
    layout: ObsLayout,
}

impl SacLearner {
    pub fn new(params: SacParams, config: SacConfig, layout: ObsLayout) -> Self {
        let actor_opt = OptimizerState::new(params.actor.param_count(), AdamConfig::with_lr(config.actor_lr));
        let critic_opts = params
            .critics
            .iter()
            .map(|c| OptimizerState::new(c.param_count(), AdamConfig::with_lr(config.critic_lr)))
            .collect();
        SacLearner {
            log_alpha: params.alpha.ln(),
            alpha_opt: OptimizerState::new(1, AdamConfig::with_lr(config.alpha_lr)),
            params,
            config,
            actor_opt,
            critic_opts,
            version: 0,
            updates: 0,
            skipped: 0,
            layout,
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Optimizer steps rejected for non-finite gradients.
    pub fn skipped_steps(&self) -> u64 {
        self.skipped
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot::from_f64(self.version, &self.params.actor.params())
    }

    /// One critic step, one actor step (and temperature step if enabled),
    /// one Polyak step; returns the new snapshot, or `None` if the buffer
    /// cannot yet supply a minibatch.
    pub fn update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<Option<PolicySnapshot>, Error> {
        let k = self.params.minibatch_size;
        let sample = match buffer.sample(k, rng) {
            Ok(s) => s,
            Err(NotReady { .. }) => return Ok(None),
        };
        self.update_on(sample, rng).map(Some)
    }

    /// [`update`](Self::update) on a minibatch drawn elsewhere, e.g. by a
    /// buffer owned by another thread.
    pub fn update_on<'a, I, R>(&mut self, sample: I, rng: &mut R) -> Result<PolicySnapshot, Error>
    where
        I: IntoIterator<Item = &'a Transition>,
        R: Rng + ?Sized,
    {
        let batch = Minibatch::from_transitions(sample, &self.layout)?;
        let k = batch.len;
        let a = self.params.action_dim();

        let noise = normal_noise(k, a, rng);
        let cl = critic_loss(&self.params, &batch, &noise)?;
        for ((critic, grad), opt) in self.params.critics.iter_mut().zip(&cl.grads).zip(&mut self.critic_opts) {
            let mut p = critic.params();
            if adam_step(&mut p, grad, opt)? == StepOutcome::Applied {
                critic.set_params(&p)?;
            } else {
                self.skipped += 1;
            }
        }

        let noise = normal_noise(k, a, rng);
        let al = actor_loss(&self.params, &batch, &noise)?;
        let mut p = self.params.actor.params();
        if adam_step(&mut p, &al.grad, &mut self.actor_opt)? == StepOutcome::Applied {
            quantize_slice(&mut p);
            self.params.actor.set_params(&p)?;
        } else {
            self.skipped += 1;
        }

        if self.config.learn_alpha {
            let target_entropy = -(a as f64);
            let g = [-(al.mean_log_prob + target_entropy)];
            let mut la = [self.log_alpha];
            if adam_step(&mut la, &g, &mut self.alpha_opt)? == StepOutcome::Applied {
                self.log_alpha = la[0];
                self.params.alpha = la[0].exp();
            }
        }

        polyak_update(&mut self.params);
        self.updates += 1;
        self.version += 1;
        Ok(self.snapshot())
    }
}

/// Runs one update if the throttle allows it at `step_count` and the buffer
/// can supply a minibatch.
pub fn sac_update_cycle<R: Rng + ?Sized>(
    learner: &mut SacLearner,
    buffer: &ReplayBuffer,
    throttle: &mut UpdateThrottle,
    step_count: u64,
    rng: &mut R,
) -> Result<Option<PolicySnapshot>, Error> {
    if !throttle.permits(step_count) || !buffer.is_ready(learner.params.minibatch_size) {
        return Ok(None);
    }
    throttle.consume();
    learner.update(buffer, rng)
}

#[cfg(test)]
mod tests;
