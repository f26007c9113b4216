//! Virtual-time run loop. Every process iteration is an event on one heap;
//! compute costs and link delays only move events forward in time.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Duration;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::topology::{Algo, Host, Mode, ModeTopology};
use super::{check_handshake, hello_for, sync_policy, Dir, LogEvent, RunReport, SyncOutcome};
use crate::clock::{duration_nanos, Timestamp};
use crate::envs::{Env, TaskSpec};
use crate::error::Error;
use crate::metrics::MetricRecord;
use crate::nn::{DenseNet, SquashedGaussian};
use crate::ppo::{ppo_update, PpoLearner, PpoParams, RolloutBuffer};
use crate::rng::{SeedTree, Stream};
use crate::sac::{normal_noise, ReplayBuffer, SacLearner, SacParams, UpdateThrottle};
use crate::transport::{decode, encode, ActCommand, BoundedQueue, Delivery, Link, Message, MessageKind, ObsReport, Payload};
use crate::types::{flatten_observation, quantize, Action, ActionBounds, ObsLayout, Observation, PolicySnapshot, Transition};

/// Same-time events run in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Prio {
    Deliver,
    UpdateDone,
    ActionReady,
    ConsumerResume,
    Depart,
    Tick,
    LocalSend,
    UpdateAttempt,
    HelloTimeout,
}

#[derive(Debug)]
enum Ev {
    Tick,
    ActionReady(Ready),
    Depart(Dir, Payload),
    Deliver(Dir, Vec<u8>),
    LocalSend,
    UpdateAttempt,
    UpdateDone(Option<PolicySnapshot>),
    ConsumerResume,
    HelloTimeout,
}

struct Scheduled {
    at: Timestamp,
    prio: Prio,
    order: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Scheduled {
    // Reversed: BinaryHeap pops the maximum.
    fn cmp(&self, o: &Self) -> Ordering {
        (o.at, o.prio, o.order).cmp(&(self.at, self.prio, self.order))
    }
}

/// An action computed for one observation.
#[derive(Clone, Debug)]
struct Ready {
    obs_seq: u64,
    action: Action,
    log_prob: f64,
    version: u64,
}

/// The acting policy and its sampling stream. Exactly one per run, on the
/// host that computes actions.
pub(super) struct Actor {
    pub(super) net: DenseNet,
    pub(super) version: u64,
    dist: SquashedGaussian,
    bounds: ActionBounds,
    rng: ChaCha8Rng,
    acted: u64,
    warmup: u64,
}

impl Actor {
    pub(super) fn new(net: DenseNet, bounds: &ActionBounds, rng: ChaCha8Rng, warmup: u64) -> Self {
        Actor { net, version: 0, dist: SquashedGaussian::new(bounds), bounds: bounds.clone(), rng, acted: 0, warmup }
    }

    pub(super) fn act(&mut self, obs: &Observation, layout: &ObsLayout) -> Result<(Action, f64), Error> {
        let a = self.bounds.dim();
        self.acted += 1;
        if self.acted <= self.warmup {
            let values: Vec<f64> = (0..a).map(|i| quantize(self.rng.random_range(self.bounds.lo[i]..=self.bounds.hi[i]))).collect();
            let log_density = -(0..a).map(|i| (self.bounds.hi[i] - self.bounds.lo[i]).ln()).sum::<f64>();
            return Ok((Action::new(values), quantize(log_density)));
        }
        let x = flatten_observation(obs, layout)?;
        let head = self.net.forward(&x)?;
        if head.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy output"));
        }
        let noise = normal_noise(1, a, &mut self.rng);
        let mut values = self.dist.sample(&head, &noise).action;
        self.bounds.clamp(&mut values);
        values.iter_mut().for_each(|v| *v = quantize(*v));
        let lp = quantize(self.dist.log_prob(&head, &values));
        Ok((Action::new(values), lp))
    }

    /// Log-probability of an action the actor did not choose (a held one).
    pub(super) fn log_prob(&self, obs: &Observation, layout: &ObsLayout, action: &Action) -> Result<f64, Error> {
        let head = self.net.forward(&flatten_observation(obs, layout)?)?;
        Ok(quantize(self.dist.log_prob(&head, &action.values)))
    }
}

enum Learner {
    Sac { learner: Box<SacLearner>, buffer: ReplayBuffer, throttle: UpdateThrottle, ingested: u64 },
    Ppo { learner: Box<PpoLearner>, rollout: RolloutBuffer },
}

/// Remote-only learner interface: the observation awaiting its successor.
struct Pending {
    obs: Observation,
    episode: u64,
    step: u32,
    sent: Option<Ready>,
}

/// A configured system on the virtual clock.
pub struct Simulation {
    cfg: RunConfig,
    spec: TaskSpec,
    remote_spec: TaskSpec,
    layout: ObsLayout,
    topo: ModeTopology,
    cycle: Duration,

    heap: BinaryHeap<Scheduled>,
    order: u64,
    now: Timestamp,
    t0: Option<Timestamp>,
    finished: bool,

    env: Env,
    env_rng: ChaCha8Rng,
    obs: Observation,
    obs_seq: u64,
    ready: Option<Ready>,
    episode: u64,
    ep_return: f64,
    ep_start_version: u64,
    last_act_version: u64,
    paused: bool,
    since_resume: u64,

    actor: Actor,
    staged: Option<PolicySnapshot>,
    learner: Learner,
    learner_rng: ChaCha8Rng,
    latest_version: u64,
    last_sent_version: u64,
    busy: bool,
    attempt_scheduled: bool,

    uplink: Link,
    downlink: Link,
    seqs: [[u64; 16]; 2],
    local_queue: BoundedQueue<(Timestamp, Transition)>,
    remote_queue: BoundedQueue<(Timestamp, Transition)>,
    resume_scheduled: bool,
    lip_iters: u64,
    lip_busy_until: Timestamp,
    /// PPO updates run inside the learner interface; when that process also
    /// computes actions, inference waits for the update.
    inference_blocked_until: Timestamp,
    obs_sent: u64,
    pending: Option<Pending>,

    report: RunReport,
}

impl Simulation {
    pub fn new(cfg: RunConfig) -> Result<Self, Error> {
        let spec = cfg.task_spec();
        Self::with_remote_spec(cfg, spec)
    }

    /// Lets the learner side believe in a different task, to exercise the
    /// handshake check.
    pub fn with_remote_spec(cfg: RunConfig, remote_spec: TaskSpec) -> Result<Self, Error> {
        cfg.validate().map_err(Error::Config)?;
        let spec = cfg.task_spec();
        let layout = spec.layout();
        let topo = cfg.topology();
        let seeds = SeedTree::new(cfg.seed);
        let mut init = seeds.stream(Stream::PolicyInit);
        let (learner, actor_net) = match cfg.algo {
            Algo::Sac => {
                let params = SacParams::new(&layout, &spec.action_bounds, &cfg.sac, &mut init);
                let net = params.actor.clone();
                let learner = SacLearner::new(params, cfg.sac.clone(), layout);
                let throttle = UpdateThrottle::new(cfg.effective_throttle());
                (
                    Learner::Sac { learner: Box::new(learner), buffer: ReplayBuffer::new(cfg.sac.buffer_capacity), throttle, ingested: 0 },
                    net,
                )
            }
            Algo::Ppo => {
                let params = PpoParams::new(&layout, &spec.action_bounds, &cfg.ppo, &mut init);
                let net = params.actor.clone();
                let learner = PpoLearner::new(params, cfg.ppo.clone(), layout);
                (Learner::Ppo { learner: Box::new(learner), rollout: RolloutBuffer::new(cfg.ppo.horizon) }, net)
            }
        };
        let warmup = if cfg.algo == Algo::Sac { cfg.sac.warmup_steps } else { 0 };
        let actor = Actor::new(actor_net, &spec.action_bounds, seeds.stream(Stream::ActionNoise), warmup);
        let cap = spec.max_episode_steps as usize;
        Ok(Simulation {
            cycle: spec.cycle_time,
            env: Env::new(spec.clone()),
            obs: Observation::zeros(&layout),
            heap: BinaryHeap::new(),
            order: 0,
            now: Timestamp::ZERO,
            t0: None,
            finished: false,
            env_rng: seeds.stream(Stream::Env),
            obs_seq: 0,
            ready: None,
            episode: 0,
            ep_return: 0.0,
            ep_start_version: 0,
            last_act_version: 0,
            paused: false,
            since_resume: 0,
            actor,
            staged: None,
            learner,
            learner_rng: seeds.stream(Stream::LearnerNoise),
            latest_version: 0,
            last_sent_version: 0,
            busy: false,
            attempt_scheduled: false,
            uplink: Link::new(cfg.link.clone(), seeds.stream(Stream::LinkUplink)),
            downlink: Link::new(cfg.link.clone(), seeds.stream(Stream::LinkDownlink)),
            seqs: [[0; 16]; 2],
            local_queue: BoundedQueue::new(cap),
            remote_queue: BoundedQueue::new(cap),
            resume_scheduled: false,
            lip_iters: 0,
            lip_busy_until: Timestamp::ZERO,
            inference_blocked_until: Timestamp::ZERO,
            obs_sent: 0,
            pending: None,
            report: RunReport::default(),
            spec,
            remote_spec,
            layout,
            topo,
            cfg,
        })
    }

    pub fn topology(&self) -> &ModeTopology {
        &self.topo
    }

    fn schedule(&mut self, at: Timestamp, prio: Prio, ev: Ev) {
        self.order += 1;
        self.heap.push(Scheduled { at, prio, order: self.order, ev });
    }

    fn log(&mut self, e: impl FnOnce(Timestamp) -> LogEvent) {
        if self.cfg.log_events {
            let ev = e(self.now);
            self.report.events.push(ev);
        }
    }

    fn cost(&self, host: Host) -> &super::ComputeModel {
        self.topo.compute(host)
    }

    /// Runs to `total_steps` environment steps, then lets in-flight data
    /// settle. Errors only on startup failure; later failures abort the run
    /// and are reported in [`RunReport::aborted`].
    pub fn run(mut self) -> Result<RunReport, Error> {
        if self.topo.uses_link() {
            self.send_hello(Timestamp::ZERO);
        } else {
            self.start()?;
        }
        while let Some(s) = self.heap.pop() {
            debug_assert!(s.at >= self.now, "time went backwards");
            self.now = s.at;
            if let Err(e) = self.handle(s.ev) {
                if let Error::Startup(_) = e {
                    return Err(e);
                }
                self.report.aborted = Some(e.to_string());
                break;
            }
        }
        self.report.stats.end_ns = self.now.0;
        self.report.stats.local_queue = self.local_queue.stats();
        self.report.stats.remote_queue = self.remote_queue.stats();
        self.report.stats.messages_dropped = self.uplink.dropped() + self.downlink.dropped();
        self.report.stats.updates = match &self.learner {
            Learner::Sac { learner, .. } => learner.updates(),
            Learner::Ppo { learner, .. } => learner.version(),
        };
        Ok(self.report)
    }

    fn handle(&mut self, ev: Ev) -> Result<(), Error> {
        match ev {
            Ev::Tick => self.tick(),
            Ev::ActionReady(r) => {
                if r.obs_seq == self.obs_seq {
                    self.ready = Some(r);
                }
                Ok(())
            }
            Ev::Depart(dir, payload) => {
                self.depart(dir, payload);
                Ok(())
            }
            Ev::Deliver(dir, bytes) => self.deliver(dir, &bytes),
            Ev::LocalSend => {
                let batch: Vec<Transition> = self.local_queue.drain().into_iter().map(|(_, t)| t).collect();
                if !batch.is_empty() {
                    let at = self.now + self.cost(Host::Local).relay_cost;
                    self.schedule(at, Prio::Depart, Ev::Depart(Dir::Uplink, Payload::Transitions(batch)));
                }
                Ok(())
            }
            Ev::UpdateAttempt => {
                self.attempt_scheduled = false;
                self.try_sac_update()
            }
            Ev::UpdateDone(snap) => self.update_done(snap),
            Ev::ConsumerResume => {
                self.resume_scheduled = false;
                self.ingest()
            }
            Ev::HelloTimeout => {
                if self.t0.is_none() {
                    self.send_hello(self.now);
                }
                Ok(())
            }
        }
    }

    // ---- agent-environment interface -------------------------------------

    fn send_hello(&mut self, at: Timestamp) {
        let hello = hello_for(&self.spec, &self.actor.net.shape());
        let t = at + self.cost(Host::Local).relay_cost;
        self.schedule(t, Prio::Depart, Ev::Depart(Dir::Uplink, Payload::Hello(hello)));
        self.schedule(at + Duration::from_secs(1), Prio::HelloTimeout, Ev::HelloTimeout);
    }

    /// First observation; time origin of the tick grid.
    fn start(&mut self) -> Result<(), Error> {
        self.t0 = Some(self.now);
        self.report.stats.start_ns = self.now.0;
        self.obs = self.env.reset(&mut self.env_rng);
        self.ep_start_version = self.actor_version_seen();
        self.send_reset_report();
        self.request_action()?;
        self.schedule(self.now + self.cycle, Prio::Tick, Ev::Tick);
        Ok(())
    }

    fn actor_version_seen(&self) -> u64 {
        match self.topo.mode {
            Mode::RemoteOnly => self.last_act_version,
            _ => self.actor.version,
        }
    }

    fn apply_staged(&mut self, host: Host) -> Result<(), Error> {
        if let Some(snap) = self.staged.take() {
            match sync_policy(&mut self.actor.net, &mut self.actor.version, &snap)? {
                SyncOutcome::Applied => {
                    self.report.stats.snapshots_applied += 1;
                    self.log(|at| LogEvent::SnapshotApplied { at, host, version: snap.version });
                }
                SyncOutcome::Stale => self.reject(snap.version, "stale"),
                SyncOutcome::Corrupt => self.reject(snap.version, "checksum"),
            }
        }
        Ok(())
    }

    fn reject(&mut self, version: u64, reason: &'static str) {
        self.report.stats.snapshots_rejected += 1;
        self.log(|at| LogEvent::SnapshotRejected { at, version, reason });
    }

    /// Starts computing the action for `self.obs`. In remote-only the
    /// request is the OBS message that was just sent.
    fn request_action(&mut self) -> Result<(), Error> {
        self.ready = None;
        if self.topo.mode == Mode::RemoteOnly {
            self.obs_seq = self.obs_sent;
            return Ok(());
        }
        self.obs_seq += 1;
        let (action, log_prob) = self.actor.act(&self.obs, &self.layout)?;
        let (obs_seq, version) = (self.obs_seq, self.actor.version);
        self.log(|at| LogEvent::Inference { at, host: Host::Local, obs_seq, version });
        let at = self.now.max(self.inference_blocked_until) + self.cost(Host::Local).inference_cost;
        self.schedule(at, Prio::ActionReady, Ev::ActionReady(Ready { obs_seq, action, log_prob, version }));
        Ok(())
    }

    /// OBS messages are numbered in send order, so the AIP knows the
    /// sequence number each one will carry.
    fn send_obs(&mut self, report: ObsReport) {
        self.obs_sent += 1;
        let at = self.now + self.cost(Host::Local).relay_cost;
        self.schedule(at, Prio::Depart, Ev::Depart(Dir::Uplink, Payload::Obs(report)));
    }

    fn send_reset_report(&mut self) {
        if self.topo.mode == Mode::RemoteOnly {
            let report = ObsReport { obs: self.obs.clone(), episode_id: self.episode, step: 0, reward: 0.0, done: false };
            self.send_obs(report);
        }
    }

    fn tick(&mut self) -> Result<(), Error> {
        if self.finished {
            return Ok(());
        }
        let local_actor = self.topo.actor_host() == Host::Local;
        if local_actor && self.cfg.algo == Algo::Sac {
            self.apply_staged(Host::Local)?;
        }
        let fresh = self.ready.take().filter(|r| r.obs_seq == self.obs_seq);
        let t = self.env.tick(fresh.as_ref().map(|r| &r.action));
        let step_index = self.env.step_index() - 1;
        let stats = &mut self.report.stats;
        stats.steps += 1;
        if t.missed_deadline {
            stats.missed_deadlines += 1;
        }
        if let Some(r) = &fresh {
            let lag = self.latest_version.saturating_sub(r.version);
            stats.staleness_sum += lag;
            stats.staleness_count += 1;
            stats.staleness_max = stats.staleness_max.max(lag);
            if self.topo.mode == Mode::RemoteOnly {
                self.last_act_version = r.version;
            }
        }
        let (step, episode, version, action) = (stats.steps, self.episode, fresh.as_ref().map(|r| r.version), t.applied.values.clone());
        self.log(|at| LogEvent::Tick { at, step, episode, version, action });
        self.ep_return += t.reward;

        if self.topo.mode == Mode::RemoteOnly {
            let report = ObsReport { obs: t.obs.clone(), episode_id: self.episode, step: step_index + 1, reward: t.reward, done: t.done };
            self.send_obs(report);
            self.report.stats.transitions_produced += 1;
        } else {
            let (log_prob, version) = match &fresh {
                Some(r) => (r.log_prob, r.version),
                None => (self.actor.log_prob(&self.obs, &self.layout, &t.applied)?, self.actor.version),
            };
            let tr = Transition {
                obs: std::mem::replace(&mut self.obs, t.obs.clone()),
                action: t.applied.clone(),
                reward: t.reward,
                next_obs: t.obs.clone(),
                done: t.done,
                episode_id: self.episode,
                step_index,
                produced_at: self.now,
                behavior_log_prob: log_prob,
                policy_version: version,
            };
            self.report.stats.transitions_produced += 1;
            self.local_queue.push((self.now, tr));
            if self.topo.mode == Mode::LocalOnly {
                self.ingest()?;
            } else {
                self.schedule(self.now, Prio::LocalSend, Ev::LocalSend);
            }
        }
        self.obs = t.obs;

        if t.done {
            self.end_episode();
            if local_actor && self.cfg.algo == Algo::Ppo {
                self.apply_staged(Host::Local)?;
            }
            self.obs = self.env.reset(&mut self.env_rng);
            self.ep_start_version = self.actor_version_seen();
            if self.report.stats.steps < self.cfg.total_steps {
                self.send_reset_report();
            }
        }

        if self.cfg.abort_after_steps == Some(self.report.stats.steps) {
            return Err(Error::Fault(format!("injected fault after {} steps", self.report.stats.steps)));
        }
        if self.report.stats.steps >= self.cfg.total_steps {
            self.finish();
            return Ok(());
        }
        self.request_action()?;
        self.since_resume += 1;
        if self.cfg.ppo.pause_during_update && self.cfg.algo == Algo::Ppo && self.since_resume >= self.cfg.ppo.horizon as u64 {
            self.paused = true;
        } else {
            self.schedule(self.now + self.cycle, Prio::Tick, Ev::Tick);
        }
        Ok(())
    }

    fn end_episode(&mut self) {
        let steps = self.env.step_index() as u64;
        let cycle_ns = duration_nanos(self.cycle);
        let rec = MetricRecord {
            run_id: self.cfg.run_id.clone(),
            seed: self.cfg.seed,
            mode: self.cfg.mode.name().to_string(),
            algorithm: self.cfg.algo.name().to_string(),
            episode_index: self.episode,
            episodic_return: self.ep_return,
            episode_length_steps: steps,
            real_experience_time_s: (steps * cycle_ns) as f64 / 1e9,
            missed_deadlines: self.env.missed_in_episode(),
            policy_version_at_episode_start: self.ep_start_version,
        };
        let (episode, ret) = (self.episode, self.ep_return);
        self.log(|at| LogEvent::EpisodeEnd { at, episode, ret, steps });
        self.report.records.push(rec);
        self.report.stats.episodes += 1;
        self.episode += 1;
        self.ep_return = 0.0;
    }

    fn finish(&mut self) {
        self.finished = true;
        if self.topo.uses_link() {
            let at = self.now + self.cost(Host::Local).relay_cost;
            self.schedule(at, Prio::Depart, Ev::Depart(Dir::Uplink, Payload::Bye));
        }
    }

    fn resume(&mut self) {
        if !self.paused || self.finished {
            return;
        }
        self.paused = false;
        self.since_resume = 0;
        let t0 = self.t0.expect("running").0;
        let c = duration_nanos(self.cycle);
        // Strictly after now, so an action computed after the update can make it.
        let n = (self.now.0 - t0) / c + 1;
        self.schedule(Timestamp(t0 + n * c), Prio::Tick, Ev::Tick);
    }

    // ---- link -------------------------------------------------------------

    fn depart(&mut self, dir: Dir, payload: Payload) {
        let kind = Message::new(0, self.now, payload.clone()).kind();
        let side = dir as usize;
        self.seqs[side][kind as usize] += 1;
        let seq = self.seqs[side][kind as usize];
        let msg = Message::new(seq, self.now, payload);
        let bytes = encode(&msg);
        let stats = &mut self.report.stats;
        stats.messages_sent[kind as usize] += 1;
        stats.bytes_sent += bytes.len() as u64;
        if matches!(kind, MessageKind::Obs | MessageKind::Act) {
            stats.inference_path_messages += 1;
        }
        let link = match dir {
            Dir::Uplink => &mut self.uplink,
            Dir::Downlink => &mut self.downlink,
        };
        let delivery = link.send(self.now);
        let n = bytes.len();
        let deliver_at = match delivery {
            Delivery::At(t) => Some(t),
            Delivery::Dropped => None,
        };
        self.log(|at| LogEvent::Send { at, dir, kind, seq, bytes: n, deliver_at });
        match deliver_at {
            Some(t) => self.schedule(t, Prio::Deliver, Ev::Deliver(dir, bytes)),
            None => {
                if let Payload::Transitions(ts) = &msg.payload {
                    self.report.stats.transitions_lost += ts.len() as u64;
                }
            }
        }
    }

    fn deliver(&mut self, dir: Dir, bytes: &[u8]) -> Result<(), Error> {
        let msg = match decode(bytes) {
            Ok(m) => m,
            Err(_) => {
                self.reject(0, "undecodable");
                return Ok(());
            }
        };
        let (kind, seq) = (msg.kind(), msg.seq);
        self.log(|at| LogEvent::Deliver { at, dir, kind, seq });
        match (dir, msg.payload) {
            (Dir::Uplink, Payload::Hello(h)) => {
                let mine = hello_for(&self.remote_spec, &self.actor.net.shape());
                check_handshake(&h, &mine)?;
                let at = self.now + self.cost(Host::Remote).relay_cost;
                self.schedule(at, Prio::Depart, Ev::Depart(Dir::Downlink, Payload::Hello(mine)));
                Ok(())
            }
            (Dir::Downlink, Payload::Hello(h)) => {
                check_handshake(&hello_for(&self.spec, &self.actor.net.shape()), &h)?;
                if self.t0.is_none() {
                    self.start()?;
                }
                Ok(())
            }
            (Dir::Uplink, Payload::Transitions(ts)) => {
                for t in ts {
                    self.remote_queue.push((self.now, t));
                }
                self.ingest()?;
                self.lip_iteration()
            }
            (Dir::Uplink, Payload::Obs(report)) => self.lip_obs(seq, report),
            (Dir::Uplink, Payload::Bye) => Ok(()),
            (Dir::Downlink, Payload::Act(cmd)) => {
                if self.finished {
                    return Ok(());
                }
                // A late ACT answers an observation that has already been
                // replaced; it is dropped rather than applied to a newer state.
                if cmd.obs_seq == self.obs_seq {
                    self.ready = Some(Ready {
                        obs_seq: cmd.obs_seq,
                        action: Action::new(cmd.action),
                        log_prob: cmd.log_prob,
                        version: cmd.policy_version,
                    });
                }
                Ok(())
            }
            (Dir::Downlink, Payload::Policy(snap)) => {
                // Local-Receive: stage the newest verified snapshot.
                let newest = self.staged.as_ref().map_or(self.actor.version, |s| s.version);
                if !snap.verify() {
                    self.reject(snap.version, "checksum");
                } else if snap.version <= newest {
                    self.reject(snap.version, "stale");
                } else {
                    self.staged = Some(snap);
                }
                if self.cfg.ppo.pause_during_update {
                    self.resume();
                }
                Ok(())
            }
            (Dir::Downlink, Payload::Heartbeat) => {
                self.resume();
                Ok(())
            }
            (d, p) => Err(Error::Startup(format!("unexpected {} on {}", Message::new(0, self.now, p).kind().name(), d.name()))),
        }
    }

    // ---- learner interface ------------------------------------------------

    /// One Learner-Interface loop iteration in remote-local: every `k`th
    /// iteration ships the newest snapshot, if there is one.
    fn lip_iteration(&mut self) -> Result<(), Error> {
        self.lip_iters += 1;
        if self.lip_iters.is_multiple_of(self.topo.k) {
            self.ship_policy();
        }
        Ok(())
    }

    fn ship_policy(&mut self) {
        if self.latest_version > self.last_sent_version {
            self.last_sent_version = self.latest_version;
            let snap = self.latest_snapshot();
            let at = self.now + self.cost(Host::Remote).relay_cost;
            self.schedule(at, Prio::Depart, Ev::Depart(Dir::Downlink, Payload::Policy(snap)));
        }
    }

    fn latest_snapshot(&self) -> PolicySnapshot {
        match &self.learner {
            Learner::Sac { learner, .. } => learner.snapshot(),
            Learner::Ppo { learner, .. } => learner.snapshot(),
        }
    }

    /// Remote-only: complete the previous transition, then compute the next
    /// action serially with the other observations.
    fn lip_obs(&mut self, seq: u64, report: ObsReport) -> Result<(), Error> {
        if report.step > 0 {
            if let Some(p) = self.pending.take() {
                if p.episode == report.episode_id && p.step + 1 == report.step {
                    let action = Action::new(report.obs.prev_action.clone());
                    let (log_prob, version) = match &p.sent {
                        Some(r) if r.action == action => (r.log_prob, r.version),
                        _ => (self.actor.log_prob(&p.obs, &self.layout, &action)?, self.actor.version),
                    };
                    let tr = Transition {
                        obs: p.obs,
                        action,
                        reward: report.reward,
                        next_obs: report.obs.clone(),
                        done: report.done,
                        episode_id: report.episode_id,
                        step_index: p.step,
                        produced_at: self.now,
                        behavior_log_prob: log_prob,
                        policy_version: version,
                    };
                    self.remote_queue.push((self.now, tr));
                    self.ingest()?;
                }
            }
        } else if self.cfg.algo == Algo::Ppo {
            self.apply_staged(Host::Remote)?;
        }
        if self.cfg.algo == Algo::Sac {
            self.apply_staged(Host::Remote)?;
        }
        self.lip_iters += 1;
        if report.done || self.finished {
            return Ok(());
        }
        let start = self.now.max(self.lip_busy_until).max(self.inference_blocked_until);
        let (action, log_prob) = self.actor.act(&report.obs, &self.layout)?;
        let version = self.actor.version;
        self.log(|at| LogEvent::Inference { at, host: Host::Remote, obs_seq: seq, version });
        let done_at = start + self.cost(Host::Remote).inference_cost;
        self.lip_busy_until = done_at;
        let r = Ready { obs_seq: seq, action: action.clone(), log_prob, version };
        self.pending = Some(Pending { obs: report.obs, episode: report.episode_id, step: report.step, sent: Some(r) });
        let cmd = ActCommand { obs_seq: seq, action: action.values, policy_version: version, log_prob };
        let at = done_at + self.cost(Host::Remote).relay_cost;
        self.schedule(at, Prio::Depart, Ev::Depart(Dir::Downlink, Payload::Act(cmd)));
        Ok(())
    }

    fn learner_host(&self) -> Host {
        self.topo.learner_host()
    }

    fn consumer_queue(&mut self) -> &mut BoundedQueue<(Timestamp, Transition)> {
        match self.topo.mode {
            Mode::LocalOnly => &mut self.local_queue,
            _ => &mut self.remote_queue,
        }
    }

    /// End of the stall window containing `now`, if the consumer is stalled.
    fn stalled_until(&self) -> Option<Timestamp> {
        let (s, p) = (duration_nanos(self.cfg.consumer_stall), duration_nanos(self.cfg.consumer_stall_period));
        if s == 0 || p == 0 {
            return None;
        }
        let t0 = self.t0?.0;
        let rel = self.now.0.checked_sub(t0)?;
        let j = rel / p;
        (j >= 1 && rel - j * p < s).then(|| Timestamp(t0 + j * p + s))
    }

    /// Replay-buffer (or rollout) side: moves queued transitions in.
    fn ingest(&mut self) -> Result<(), Error> {
        if let Some(until) = self.stalled_until() {
            if !self.resume_scheduled {
                self.resume_scheduled = true;
                self.schedule(until, Prio::ConsumerResume, Ev::ConsumerResume);
            }
            return Ok(());
        }
        while let Some((queued_at, t)) = self.consumer_queue().pop() {
            let wait = self.now.0 - queued_at.0;
            let stats = &mut self.report.stats;
            stats.max_insert_wait_ns = stats.max_insert_wait_ns.max(wait);
            let (episode, step_index) = (t.episode_id, t.step_index);
            match &mut self.learner {
                Learner::Sac { buffer, ingested, .. } => {
                    buffer.insert(t);
                    *ingested += 1;
                }
                Learner::Ppo { rollout, .. } => {
                    if self.busy {
                        self.report.stats.transitions_discarded += 1;
                        continue;
                    }
                    rollout.push(t);
                }
            }
            self.report.stats.transitions_ingested += 1;
            self.log(|at| LogEvent::Insert { at, episode, step_index, queued_at });
            if let Learner::Ppo { rollout, .. } = &self.learner {
                if rollout.is_full() && !self.busy && !self.finished {
                    self.start_ppo_update()?;
                }
            }
        }
        if matches!(self.learner, Learner::Sac { .. }) && !self.busy && !self.attempt_scheduled && !self.finished {
            self.attempt_scheduled = true;
            self.schedule(self.now, Prio::UpdateAttempt, Ev::UpdateAttempt);
        }
        Ok(())
    }

    fn try_sac_update(&mut self) -> Result<(), Error> {
        if self.busy || self.finished {
            return Ok(());
        }
        let Learner::Sac { learner, buffer, throttle, ingested } = &mut self.learner else {
            return Ok(());
        };
        if !throttle.permits(*ingested) || !buffer.is_ready(learner.params.minibatch_size) {
            return Ok(());
        }
        throttle.consume();
        let snap = learner.update(buffer, &mut self.learner_rng)?;
        self.busy = true;
        let host = self.learner_host();
        self.log(|at| LogEvent::UpdateStart { at, host });
        let at = self.now + self.cost(host).update_cost;
        self.schedule(at, Prio::UpdateDone, Ev::UpdateDone(snap));
        Ok(())
    }

    fn start_ppo_update(&mut self) -> Result<(), Error> {
        let Learner::Ppo { learner, rollout } = &mut self.learner else {
            return Ok(());
        };
        let snap = match ppo_update(learner, rollout, &mut self.learner_rng) {
            Ok(s) => Some(s),
            Err(Error::NonFinite(_)) => None,
            Err(e) => return Err(e),
        };
        self.busy = true;
        let host = self.learner_host();
        self.log(|at| LogEvent::UpdateStart { at, host });
        let minibatches = self.cfg.ppo.horizon.div_ceil(self.cfg.ppo.minibatch_size) as u32;
        let cost = self.cost(host).update_cost * minibatches * self.cfg.ppo.epochs as u32;
        if host == self.topo.actor_host() {
            self.inference_blocked_until = self.now + cost;
        }
        self.schedule(self.now + cost, Prio::UpdateDone, Ev::UpdateDone(snap));
        Ok(())
    }

    fn update_done(&mut self, snap: Option<PolicySnapshot>) -> Result<(), Error> {
        self.busy = false;
        if let Some(snap) = snap {
            let version = snap.version;
            self.log(|at| LogEvent::UpdateDone { at, version });
            self.latest_version = version;
            match self.topo.mode {
                Mode::LocalOnly | Mode::RemoteOnly => self.staged = Some(snap),
                Mode::RemoteLocal => {}
            }
        }
        let pause = self.cfg.algo == Algo::Ppo && self.cfg.ppo.pause_during_update;
        if pause {
            match self.topo.mode {
                Mode::LocalOnly => self.resume(),
                Mode::RemoteLocal => {
                    self.ship_policy();
                    let at = self.now + self.cost(Host::Remote).relay_cost;
                    self.schedule(at, Prio::Depart, Ev::Depart(Dir::Downlink, Payload::Heartbeat));
                }
                Mode::RemoteOnly => {
                    let at = self.now + self.cost(Host::Remote).relay_cost;
                    self.schedule(at, Prio::Depart, Ev::Depart(Dir::Downlink, Payload::Heartbeat));
                }
            }
        }
        match self.learner {
            Learner::Sac { .. } => self.try_sac_update(),
            Learner::Ppo { .. } => self.ingest(),
        }
    }
}
