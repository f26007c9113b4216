//! Wall-clock run loop. Each live process is a thread; the two hosts talk
//! over a TCP loopback connection whose sending ends impose the configured
//! link delay and loss before bytes reach the socket.
//!
//! Compute presets are not emulated here: inference and updates cost what
//! they cost on this machine. The update throttle still applies.

use std::collections::VecDeque;
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam::channel::{self, Receiver, RecvTimeoutError, Sender, TrySendError};
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::sim::Actor;
use super::topology::{Algo, Mode};
use super::{check_handshake, hello_for, sync_policy, Dir, RunReport, RunStats, SyncOutcome};
use crate::clock::{duration_nanos, Timestamp};
use crate::envs::{Env, TaskSpec};
use crate::error::Error;
use crate::metrics::MetricRecord;
use crate::ppo::{ppo_update, PpoLearner, PpoParams, RolloutBuffer};
use crate::rng::{SeedTree, Stream};
use crate::sac::{ReplayBuffer, SacLearner, SacParams, UpdateThrottle};
use crate::transport::{encode, read_frame, ActCommand, Delivery, Hello, Link, Message, MessageKind, ObsReport, Payload, QueueStats};
use crate::types::{Action, ObsLayout, Observation, PolicySnapshot, Transition};

const HELLO_RETRIES: u32 = 5;
const ACCEPT_TIMEOUT: Duration = Duration::from_secs(5);

struct Shared {
    origin: Instant,
    finished: AtomicBool,
    /// Newest snapshot from the learner not yet picked up by its consumer.
    latest: Mutex<Option<PolicySnapshot>>,
    latest_version: AtomicU64,
    stats: Mutex<RunStats>,
}

impl Shared {
    fn now(&self) -> Timestamp {
        Timestamp(duration_nanos(self.origin.elapsed()))
    }

    fn sleep_until(&self, t: Timestamp) {
        let now = self.now();
        if t > now {
            thread::sleep(t.since(now));
        }
    }

    fn stats(&self) -> MutexGuard<'_, RunStats> {
        self.stats.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn publish(&self, snap: PolicySnapshot) {
        self.latest_version.store(snap.version, Ordering::SeqCst);
        *self.latest.lock().unwrap_or_else(|e| e.into_inner()) = Some(snap);
    }

    fn take_latest(&self) -> Option<PolicySnapshot> {
        self.latest.lock().unwrap_or_else(|e| e.into_inner()).take()
    }
}

fn join<T>(h: JoinHandle<Result<T, Error>>) -> Result<T, Error> {
    h.join().unwrap_or_else(|_| Err(Error::Startup("worker thread panicked".into())))
}

/// Producer end of a bounded transition queue, with occupancy bookkeeping.
struct QueueTx {
    tx: Sender<(Timestamp, Transition)>,
    stats: QueueStats,
    /// Real-time producers never block; overflow waits here.
    parked: VecDeque<(Timestamp, Transition)>,
}

impl QueueTx {
    fn new(tx: Sender<(Timestamp, Transition)>) -> Self {
        QueueTx { tx, stats: QueueStats::default(), parked: VecDeque::new() }
    }

    fn closed() -> Error {
        Error::Startup("transition consumer went away".into())
    }

    fn note(&mut self) {
        self.stats.pushed += 1;
        self.stats.max_occupancy = self.stats.max_occupancy.max(self.tx.len());
    }

    /// Never blocks: items that do not fit are parked and retried first on
    /// the next push.
    fn push_nonblocking(&mut self, item: (Timestamp, Transition)) -> Result<(), Error> {
        if !self.parked.is_empty() {
            self.stats.blocked_pushes += 1;
        }
        self.parked.push_back(item);
        while let Some(item) = self.parked.pop_front() {
            match self.tx.try_send(item) {
                Ok(()) => self.note(),
                Err(TrySendError::Full(item)) => {
                    self.parked.push_front(item);
                    if self.parked.len() == 1 {
                        self.stats.blocked_pushes += 1;
                    }
                    break;
                }
                Err(TrySendError::Disconnected(_)) => return Err(Self::closed()),
            }
        }
        Ok(())
    }

    /// Waits for space; back-pressure travels upstream.
    fn push_blocking(&mut self, item: (Timestamp, Transition)) -> Result<(), Error> {
        match self.tx.try_send(item) {
            Ok(()) => {}
            Err(TrySendError::Full(item)) => {
                self.stats.blocked_pushes += 1;
                self.tx.send(item).map_err(|_| Self::closed())?;
            }
            Err(TrySendError::Disconnected(_)) => return Err(Self::closed()),
        }
        self.note();
        Ok(())
    }

    /// Hands over everything parked, waiting if needed.
    fn flush(&mut self) -> Result<(), Error> {
        while let Some(item) = self.parked.pop_front() {
            self.tx.send(item).map_err(|_| Self::closed())?;
            self.note();
        }
        Ok(())
    }
}

// ---- link ends ---------------------------------------------------------------

/// Sending end of one direction: numbers, encodes, delays or drops, writes.
fn spawn_writer(dir: Dir, stream: TcpStream, mut link: Link, shared: Arc<Shared>) -> (Sender<Payload>, JoinHandle<Result<(), Error>>) {
    let (tx, rx) = channel::unbounded::<Payload>();
    let h = thread::spawn(move || {
        let mut out = BufWriter::new(stream.try_clone()?);
        let mut seqs = [0u64; 16];
        for payload in rx {
            let now = shared.now();
            let msg = Message::new(0, now, payload);
            let kind = msg.kind();
            seqs[kind as usize] += 1;
            let msg = Message { seq: seqs[kind as usize], ..msg };
            let bytes = encode(&msg);
            {
                let mut s = shared.stats();
                s.messages_sent[kind as usize] += 1;
                s.bytes_sent += bytes.len() as u64;
                if matches!(kind, MessageKind::Obs | MessageKind::Act) {
                    s.inference_path_messages += 1;
                }
            }
            match link.send(now) {
                Delivery::At(t) => {
                    shared.sleep_until(t);
                    if out.write_all(&bytes).and_then(|_| out.flush()).is_err() {
                        if shared.finished.load(Ordering::SeqCst) {
                            break;
                        }
                        return Err(Error::Startup(format!("{} link closed", dir.name())));
                    }
                }
                Delivery::Dropped => {
                    let mut s = shared.stats();
                    s.messages_dropped += 1;
                    if let Payload::Transitions(ts) = &msg.payload {
                        s.transitions_lost += ts.len() as u64;
                    }
                }
            }
        }
        let _ = out.flush();
        let _ = stream.shutdown(Shutdown::Write);
        Ok(())
    });
    (tx, h)
}

struct LocalInbox {
    hello: Receiver<Hello>,
    act: Receiver<ActCommand>,
    resume: Receiver<()>,
}

/// Local-Receive: routes downlink messages and stages the newest verified
/// snapshot for the agent interface.
fn spawn_local_receive(
    stream: TcpStream,
    shared: Arc<Shared>,
    staged: Arc<Mutex<Option<PolicySnapshot>>>,
    actor_version: Arc<AtomicU64>,
) -> (LocalInbox, JoinHandle<Result<(), Error>>) {
    let (hello_tx, hello) = channel::unbounded();
    let (act_tx, act) = channel::unbounded();
    let (resume_tx, resume) = channel::unbounded();
    let h = thread::spawn(move || {
        let mut r = BufReader::new(stream);
        loop {
            let msg = match read_frame(&mut r) {
                Ok(Some(m)) => m,
                Ok(None) => return Ok(()),
                Err(_) if shared.finished.load(Ordering::SeqCst) => return Ok(()),
                Err(e) => return Err(e.into()),
            };
            match msg.payload {
                Payload::Hello(h) => {
                    let _ = hello_tx.send(h);
                }
                Payload::Act(cmd) => {
                    let _ = act_tx.send(cmd);
                }
                Payload::Policy(snap) => {
                    let mut slot = staged.lock().unwrap_or_else(|e| e.into_inner());
                    let newest = slot.as_ref().map_or(actor_version.load(Ordering::SeqCst), |s| s.version);
                    if !snap.verify() || snap.version <= newest {
                        shared.stats().snapshots_rejected += 1;
                    } else {
                        *slot = Some(snap);
                    }
                    drop(slot);
                }
                Payload::Heartbeat => {
                    let _ = resume_tx.send(());
                }
                other => {
                    let kind = Message::new(0, msg.sent_at, other).kind();
                    return Err(Error::Startup(format!("unexpected {} on down", kind.name())));
                }
            }
        }
    });
    (LocalInbox { hello, act, resume }, h)
}

/// Local-Send: drains the local queue into one TRANSITIONS message at a time.
fn spawn_local_send(rx: Receiver<(Timestamp, Transition)>, up: Sender<Payload>) -> JoinHandle<Result<(), Error>> {
    thread::spawn(move || {
        while let Ok((_, t)) = rx.recv() {
            let mut batch = vec![t];
            batch.extend(rx.try_iter().map(|(_, t)| t));
            if up.send(Payload::Transitions(batch)).is_err() {
                return Err(Error::Startup("uplink closed".into()));
            }
        }
        Ok(())
    })
}

// ---- learner side -------------------------------------------------------------

/// Replay buffer and update worker. The buffer thread is the only writer;
/// the update thread asks it for minibatches.
fn spawn_sac_learner(cfg: &RunConfig, learner: SacLearner, seeds: &SeedTree, shared: Arc<Shared>) -> (QueueTx, Vec<JoinHandle<Result<(), Error>>>) {
    let cap = cfg.task_spec().max_episode_steps as usize;
    let (tx, rx) = channel::bounded::<(Timestamp, Transition)>(cap);
    let (req_tx, req_rx) = channel::bounded::<()>(1);
    let (rep_tx, rep_rx) = channel::bounded::<Vec<Transition>>(1);
    let mb = cfg.sac.minibatch_size;
    let capacity = cfg.sac.buffer_capacity;
    let mut throttle = UpdateThrottle::new(cfg.effective_throttle());
    let mut sampler: ChaCha8Rng = seeds.stream(Stream::Sampler);
    let mut noise: ChaCha8Rng = seeds.stream(Stream::LearnerNoise);

    let sh = shared.clone();
    let replay = thread::spawn(move || {
        let mut buffer = ReplayBuffer::new(capacity);
        let mut ingested = 0u64;
        let mut waiting = false;
        let mut req_rx = req_rx;
        loop {
            channel::select! {
                recv(rx) -> m => match m {
                    Ok((queued_at, t)) => {
                        buffer.insert(t);
                        ingested += 1;
                        let wait = sh.now().0.saturating_sub(queued_at.0);
                        let mut s = sh.stats();
                        s.transitions_ingested += 1;
                        s.max_insert_wait_ns = s.max_insert_wait_ns.max(wait);
                    }
                    Err(_) => return Ok(()),
                },
                recv(req_rx) -> m => match m {
                    Ok(()) => waiting = true,
                    Err(_) => req_rx = channel::never(),
                },
            }
            if waiting && throttle.permits(ingested) && buffer.is_ready(mb) {
                throttle.consume();
                let sample: Vec<Transition> = buffer.sample(mb, &mut sampler).expect("ready").into_iter().cloned().collect();
                waiting = false;
                if rep_tx.send(sample).is_err() {
                    req_rx = channel::never();
                }
            }
        }
    });

    let mut learner = learner;
    let update = thread::spawn(move || {
        loop {
            if shared.finished.load(Ordering::SeqCst) || req_tx.send(()).is_err() {
                return Ok(());
            }
            let Ok(sample) = rep_rx.recv() else { return Ok(()) };
            if shared.finished.load(Ordering::SeqCst) {
                return Ok(());
            }
            let snap = learner.update_on(&sample, &mut noise)?;
            shared.stats().updates += 1;
            shared.publish(snap);
        }
    });
    (QueueTx::new(tx), vec![replay, update])
}

/// PPO learning folded into whichever thread runs the learner interface.
struct InlinePpo {
    learner: Box<PpoLearner>,
    rollout: RolloutBuffer,
    rng: ChaCha8Rng,
    /// Transitions produced while the last update ran are discarded.
    last_update: (Timestamp, Timestamp),
}

impl InlinePpo {
    /// Adds one transition; returns a snapshot if that completed a rollout.
    fn push(&mut self, t: Transition, shared: &Shared) -> Result<Option<PolicySnapshot>, Error> {
        let (a, b) = self.last_update;
        if t.produced_at >= a && t.produced_at < b {
            shared.stats().transitions_discarded += 1;
            return Ok(None);
        }
        shared.stats().transitions_ingested += 1;
        if !self.rollout.push(t) || shared.finished.load(Ordering::SeqCst) {
            return Ok(None);
        }
        let start = shared.now();
        let snap = match ppo_update(&mut self.learner, &mut self.rollout, &mut self.rng) {
            Ok(s) => Some(s),
            Err(Error::NonFinite(_)) => None,
            Err(e) => return Err(e),
        };
        self.last_update = (start, shared.now());
        if let Some(s) = &snap {
            shared.stats().updates += 1;
            shared.latest_version.store(s.version, Ordering::SeqCst);
        }
        Ok(snap)
    }
}

enum LearnerEnd {
    Sac(QueueTx, Vec<JoinHandle<Result<(), Error>>>),
    Ppo(Box<InlinePpo>),
}

impl LearnerEnd {
    fn new(cfg: &RunConfig, spec: &TaskSpec, layout: ObsLayout, seeds: &SeedTree, shared: &Arc<Shared>, init: &mut ChaCha8Rng) -> (Self, crate::nn::DenseNet) {
        match cfg.algo {
            Algo::Sac => {
                let params = SacParams::new(&layout, &spec.action_bounds, &cfg.sac, init);
                let net = params.actor.clone();
                let (q, hs) = spawn_sac_learner(cfg, SacLearner::new(params, cfg.sac.clone(), layout), seeds, shared.clone());
                (LearnerEnd::Sac(q, hs), net)
            }
            Algo::Ppo => {
                let params = PpoParams::new(&layout, &spec.action_bounds, &cfg.ppo, init);
                let net = params.actor.clone();
                let ppo = InlinePpo {
                    learner: Box::new(PpoLearner::new(params, cfg.ppo.clone(), layout)),
                    rollout: RolloutBuffer::new(cfg.ppo.horizon),
                    rng: seeds.stream(Stream::LearnerNoise),
                    last_update: (Timestamp::ZERO, Timestamp::ZERO),
                };
                (LearnerEnd::Ppo(Box::new(ppo)), net)
            }
        }
    }

    /// Hands a transition to the learner; a real-time caller must not block.
    fn push(&mut self, t: Transition, realtime: bool, shared: &Shared) -> Result<Option<PolicySnapshot>, Error> {
        match self {
            LearnerEnd::Sac(q, _) => {
                let item = (shared.now(), t);
                if realtime {
                    q.push_nonblocking(item)?;
                } else {
                    q.push_blocking(item)?;
                }
                Ok(None)
            }
            LearnerEnd::Ppo(p) => p.push(t, shared),
        }
    }

    /// Closes the queue and waits for the learner threads.
    fn close(self) -> Result<QueueStats, Error> {
        match self {
            LearnerEnd::Sac(mut q, hs) => {
                let flushed = q.flush();
                let stats = q.stats;
                drop(q);
                let mut res = flushed;
                for h in hs {
                    let r = join(h);
                    if res.is_ok() {
                        res = r;
                    }
                }
                res.map(|_| stats)
            }
            LearnerEnd::Ppo(_) => Ok(QueueStats::default()),
        }
    }
}

/// Remote-only learner interface state: the observation awaiting its successor.
struct Pending {
    obs: Observation,
    episode: u64,
    step: u32,
    sent: Option<(Action, f64, u64)>,
}

struct RemoteSide {
    cfg: RunConfig,
    spec: TaskSpec,
    layout: ObsLayout,
    seeds: SeedTree,
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl RemoteSide {
    fn accept(&self) -> Result<TcpStream, Error> {
        self.listener.set_nonblocking(true)?;
        let deadline = Instant::now() + ACCEPT_TIMEOUT;
        loop {
            match self.listener.accept() {
                Ok((s, _)) => {
                    s.set_nonblocking(false)?;
                    s.set_nodelay(true)?;
                    return Ok(s);
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock && Instant::now() < deadline => {
                    thread::sleep(Duration::from_millis(1));
                }
                Err(e) => return Err(Error::Startup(format!("accept: {e}"))),
            }
        }
    }

    /// The learner interface loop; returns when the agent says goodbye.
    fn run(self) -> Result<(), Error> {
        let stream = self.accept()?;
        let shared = self.shared.clone();
        let link = Link::new(self.cfg.link.clone(), self.seeds.stream(Stream::LinkDownlink));
        let (down, writer) = spawn_writer(Dir::Downlink, stream.try_clone()?, link, shared.clone());
        let res = self.serve(stream, &down);
        drop(down);
        let w = join(writer);
        res.and(w)
    }

    fn serve(&self, stream: TcpStream, down: &Sender<Payload>) -> Result<(), Error> {
        let (cfg, shared) = (&self.cfg, &*self.shared);
        let mut init = self.seeds.stream(Stream::PolicyInit);
        let (mut learner, net) = LearnerEnd::new(cfg, &self.spec, self.layout, &self.seeds, &self.shared, &mut init);
        let shape = net.shape();
        let warmup = if cfg.algo == Algo::Sac { cfg.sac.warmup_steps } else { 0 };
        let mut actor = Actor::new(net, &self.spec.action_bounds, self.seeds.stream(Stream::ActionNoise), warmup);
        let mut staged: Option<PolicySnapshot> = None;
        let mut pending: Option<Pending> = None;
        let mut iters = 0u64;
        let mut last_sent = 0u64;
        let pause = cfg.algo == Algo::Ppo && cfg.ppo.pause_during_update;
        let send = |p: Payload| down.send(p).map_err(|_| Error::Startup("downlink closed".into()));
        let mut r = BufReader::new(stream);

        let result = (|| -> Result<(), Error> {
            loop {
                let Some(msg) = read_frame(&mut r)? else { return Ok(()) };
                let seq = msg.seq;
                let mut snap = None;
                match msg.payload {
                    Payload::Hello(h) => {
                        let mine = hello_for(&self.spec, &shape);
                        check_handshake(&h, &mine)?;
                        send(Payload::Hello(mine))?;
                        continue;
                    }
                    Payload::Bye => return Ok(()),
                    Payload::Transitions(ts) => {
                        for t in ts {
                            if let Some(s) = learner.push(t, false, shared)? {
                                snap = Some(s);
                            }
                        }
                        iters += 1;
                    }
                    Payload::Obs(report) => {
                        if report.step > 0 {
                            if let Some(p) = pending.take().filter(|p| p.episode == report.episode_id && p.step + 1 == report.step) {
                                let action = Action::new(report.obs.prev_action.clone());
                                let (log_prob, version) = match p.sent {
                                    Some((a, lp, v)) if a == action => (lp, v),
                                    _ => (actor.log_prob(&p.obs, &self.layout, &action)?, actor.version),
                                };
                                let tr = Transition {
                                    obs: p.obs,
                                    action,
                                    reward: report.reward,
                                    next_obs: report.obs.clone(),
                                    done: report.done,
                                    episode_id: report.episode_id,
                                    step_index: p.step,
                                    produced_at: shared.now(),
                                    behavior_log_prob: log_prob,
                                    policy_version: version,
                                };
                                snap = learner.push(tr, false, shared)?;
                            }
                        }
                        // Snapshot pickup: every observation for SAC, episode starts for PPO.
                        if cfg.algo == Algo::Sac || report.step == 0 {
                            let next = match cfg.algo {
                                Algo::Sac => shared.take_latest(),
                                Algo::Ppo => staged.take(),
                            };
                            if let Some(s) = next {
                                if sync_policy(&mut actor.net, &mut actor.version, &s)? == SyncOutcome::Applied {
                                    shared.stats().snapshots_applied += 1;
                                }
                            }
                        }
                        iters += 1;
                        if !report.done {
                            let (action, log_prob) = actor.act(&report.obs, &self.layout)?;
                            let version = actor.version;
                            pending = Some(Pending {
                                obs: report.obs,
                                episode: report.episode_id,
                                step: report.step,
                                sent: Some((action.clone(), log_prob, version)),
                            });
                            send(Payload::Act(ActCommand { obs_seq: seq, action: action.values, policy_version: version, log_prob }))?;
                        }
                    }
                    other => {
                        let kind = Message::new(0, msg.sent_at, other).kind();
                        return Err(Error::Startup(format!("unexpected {} on up", kind.name())));
                    }
                }
                if let Some(s) = snap {
                    match cfg.mode {
                        Mode::RemoteOnly => {
                            staged = Some(s);
                            if pause {
                                send(Payload::Heartbeat)?;
                            }
                        }
                        _ => {
                            shared.publish(s);
                            if pause {
                                last_sent = self.ship(&send, last_sent)?;
                                send(Payload::Heartbeat)?;
                            }
                        }
                    }
                }
                if cfg.mode == Mode::RemoteLocal && iters.is_multiple_of(cfg.topology().k) {
                    last_sent = self.ship(&send, last_sent)?;
                }
            }
        })();
        let closed = learner.close();
        if let Ok(q) = &closed {
            shared.stats().remote_queue = *q;
        }
        result.and(closed.map(|_| ()))
    }

    fn ship(&self, send: &impl Fn(Payload) -> Result<(), Error>, last_sent: u64) -> Result<u64, Error> {
        match self.shared.take_latest() {
            Some(s) if s.version > last_sent => {
                let v = s.version;
                send(Payload::Policy(s))?;
                Ok(v)
            }
            _ => Ok(last_sent),
        }
    }
}

// ---- agent-environment interface ------------------------------------------------

enum PolicyIn {
    /// Local-only: straight from the learner.
    Learner,
    /// Remote-local: whatever Local-Receive staged.
    Staged(Arc<Mutex<Option<PolicySnapshot>>>),
}

struct Uplink {
    up: Sender<Payload>,
    inbox: LocalInbox,
    writer: JoinHandle<Result<(), Error>>,
    reader: JoinHandle<Result<(), Error>>,
    sender: Option<JoinHandle<Result<(), Error>>>,
}

struct Fresh {
    action: Action,
    log_prob: f64,
    version: u64,
}

struct Aip<'a> {
    cfg: &'a RunConfig,
    spec: &'a TaskSpec,
    layout: ObsLayout,
    shared: &'a Shared,
    env: Env,
    env_rng: ChaCha8Rng,
    actor: Option<Actor>,
    actor_version: Arc<AtomicU64>,
    policy_in: PolicyIn,
    staged_ppo: Option<PolicySnapshot>,
    learner: Option<LearnerEnd>,
    local_queue: Option<QueueTx>,
    link: Option<&'a Uplink>,
    records: Vec<MetricRecord>,
    obs_sent: u64,
}

impl Aip<'_> {
    fn send(&self, p: Payload) -> Result<(), Error> {
        match self.link {
            Some(l) => l.up.send(p).map_err(|_| Error::Startup("uplink closed".into())),
            None => Ok(()),
        }
    }

    fn handshake(&self, shape: &[usize]) -> Result<(), Error> {
        let Some(link) = self.link else { return Ok(()) };
        let mine = hello_for(self.spec, shape);
        for _ in 0..HELLO_RETRIES {
            self.send(Payload::Hello(mine.clone()))?;
            match link.inbox.hello.recv_timeout(Duration::from_secs(1)) {
                Ok(h) => return check_handshake(&mine, &h),
                Err(RecvTimeoutError::Timeout) => continue,
                Err(RecvTimeoutError::Disconnected) => return Err(Error::Startup("connection closed during handshake".into())),
            }
        }
        Err(Error::Startup("no handshake reply".into()))
    }

    fn apply(&mut self, snap: PolicySnapshot) -> Result<(), Error> {
        let Some(actor) = self.actor.as_mut() else { return Ok(()) };
        match sync_policy(&mut actor.net, &mut actor.version, &snap)? {
            SyncOutcome::Applied => self.shared.stats().snapshots_applied += 1,
            _ => self.shared.stats().snapshots_rejected += 1,
        }
        self.actor_version.store(actor.version, Ordering::SeqCst);
        Ok(())
    }

    fn incoming(&mut self) -> Option<PolicySnapshot> {
        match &self.policy_in {
            PolicyIn::Learner => self.shared.take_latest(),
            PolicyIn::Staged(slot) => slot.lock().unwrap_or_else(|e| e.into_inner()).take(),
        }
    }

    fn send_obs(&mut self, report: ObsReport) -> Result<u64, Error> {
        self.obs_sent += 1;
        self.send(Payload::Obs(report))?;
        Ok(self.obs_sent)
    }

    /// Waits until `deadline` for the ACT answering `obs_seq`.
    fn await_act(&self, obs_seq: u64, deadline: Timestamp) -> Result<Option<Fresh>, Error> {
        let inbox = &self.link.expect("remote actor needs a link").inbox;
        loop {
            let now = self.shared.now();
            if now >= deadline {
                return Ok(None);
            }
            match inbox.act.recv_timeout(deadline.since(now)) {
                Ok(cmd) if cmd.obs_seq == obs_seq => {
                    self.shared.sleep_until(deadline);
                    return Ok(Some(Fresh { action: Action::new(cmd.action), log_prob: cmd.log_prob, version: cmd.policy_version }));
                }
                // Late answer to an observation already replaced.
                Ok(_) => continue,
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => return Err(Error::Startup("connection lost".into())),
            }
        }
    }

    fn compute(&mut self, obs: &Observation) -> Result<Option<(Fresh, Timestamp)>, Error> {
        let Some(actor) = self.actor.as_mut() else { return Ok(None) };
        let (action, log_prob) = actor.act(obs, &self.layout)?;
        Ok(Some((Fresh { action, log_prob, version: actor.version }, self.shared.now())))
    }

    fn run(&mut self) -> Result<(), Error> {
        let cfg = self.cfg;
        let cycle = duration_nanos(self.spec.cycle_time);
        let remote_actor = cfg.mode == Mode::RemoteOnly;
        let ppo = cfg.algo == Algo::Ppo;
        let pause = ppo && cfg.ppo.pause_during_update;
        let t0 = self.shared.now();
        self.shared.stats().start_ns = t0.0;

        let mut obs = self.env.reset(&mut self.env_rng);
        let (mut episode, mut ep_return, mut steps) = (0u64, 0.0, 0u64);
        let mut last_act_version = 0u64;
        let mut ep_start_version = 0u64;
        let mut obs_seq = 0u64;
        let mut pending: Option<(Fresh, Timestamp)> = None;
        if remote_actor {
            let report = ObsReport { obs: obs.clone(), episode_id: 0, step: 0, reward: 0.0, done: false };
            obs_seq = self.send_obs(report)?;
        } else {
            pending = self.compute(&obs)?;
        }
        let mut n = 1u64;
        let mut since_resume = 0u64;

        loop {
            let deadline = Timestamp(t0.0 + n * cycle);
            let fresh = if remote_actor {
                self.await_act(obs_seq, deadline)?
            } else {
                self.shared.sleep_until(deadline);
                pending.take().filter(|(_, at)| *at <= deadline).map(|(f, _)| f)
            };
            if !remote_actor && !ppo {
                if let Some(s) = self.incoming() {
                    self.apply(s)?;
                }
            }
            let tick = self.env.tick(fresh.as_ref().map(|f| &f.action));
            let step_index = self.env.step_index() - 1;
            steps += 1;
            {
                let mut s = self.shared.stats();
                s.steps = steps;
                if tick.missed_deadline {
                    s.missed_deadlines += 1;
                }
                if let Some(f) = &fresh {
                    let lag = self.shared.latest_version.load(Ordering::SeqCst).saturating_sub(f.version);
                    s.staleness_sum += lag;
                    s.staleness_count += 1;
                    s.staleness_max = s.staleness_max.max(lag);
                }
                s.transitions_produced += 1;
            }
            if let (true, Some(f)) = (remote_actor, &fresh) {
                last_act_version = f.version;
            }
            ep_return += tick.reward;

            if remote_actor {
                let report = ObsReport { obs: tick.obs.clone(), episode_id: episode, step: step_index + 1, reward: tick.reward, done: tick.done };
                self.send_obs(report)?;
            } else {
                let actor = self.actor.as_ref().expect("local actor");
                let (log_prob, version) = match &fresh {
                    Some(f) => (f.log_prob, f.version),
                    None => (actor.log_prob(&obs, &self.layout, &tick.applied)?, actor.version),
                };
                let tr = Transition {
                    obs: std::mem::replace(&mut obs, tick.obs.clone()),
                    action: tick.applied.clone(),
                    reward: tick.reward,
                    next_obs: tick.obs.clone(),
                    done: tick.done,
                    episode_id: episode,
                    step_index,
                    produced_at: self.shared.now(),
                    behavior_log_prob: log_prob,
                    policy_version: version,
                };
                if let Some(q) = self.local_queue.as_mut() {
                    q.push_nonblocking((self.shared.now(), tr))?;
                } else if let Some(l) = self.learner.as_mut() {
                    if let Some(snap) = l.push(tr, true, self.shared)? {
                        self.staged_ppo = Some(snap);
                    }
                }
            }
            obs = tick.obs;

            if tick.done {
                let len = self.env.step_index() as u64;
                self.records.push(MetricRecord {
                    run_id: cfg.run_id.clone(),
                    seed: cfg.seed,
                    mode: cfg.mode.name().to_string(),
                    algorithm: cfg.algo.name().to_string(),
                    episode_index: episode,
                    episodic_return: ep_return,
                    episode_length_steps: len,
                    real_experience_time_s: (len * cycle) as f64 / 1e9,
                    missed_deadlines: self.env.missed_in_episode(),
                    policy_version_at_episode_start: ep_start_version,
                });
                self.shared.stats().episodes += 1;
                episode += 1;
                ep_return = 0.0;
                if ppo && !remote_actor {
                    let next = match &self.policy_in {
                        PolicyIn::Learner => self.staged_ppo.take(),
                        PolicyIn::Staged(_) => self.incoming(),
                    };
                    if let Some(s) = next {
                        self.apply(s)?;
                    }
                }
                obs = self.env.reset(&mut self.env_rng);
                ep_start_version = if remote_actor { last_act_version } else { self.actor.as_ref().map_or(0, |a| a.version) };
                if remote_actor && steps < cfg.total_steps {
                    let report = ObsReport { obs: obs.clone(), episode_id: episode, step: 0, reward: 0.0, done: false };
                    self.send_obs(report)?;
                }
            }
            if cfg.abort_after_steps == Some(steps) {
                return Err(Error::Fault(format!("injected fault after {steps} steps")));
            }
            if steps >= cfg.total_steps {
                return Ok(());
            }

            if remote_actor {
                obs_seq = self.obs_sent;
            } else {
                pending = self.compute(&obs)?;
            }
            since_resume += 1;
            if pause && since_resume >= cfg.ppo.horizon as u64 {
                if let Some(link) = self.link {
                    match link.inbox.resume.recv() {
                        Ok(()) => link.inbox.resume.try_iter().for_each(drop),
                        Err(_) => return Err(Error::Startup("connection lost while paused".into())),
                    }
                }
                since_resume = 0;
                n = (self.shared.now().0 - t0.0).div_ceil(cycle).max(n + 1);
                // An action computed before the pause is still the answer to `obs`.
                if let Some((_, at)) = pending.as_mut() {
                    *at = Timestamp(t0.0 + (n - 1) * cycle);
                }
            } else {
                n += 1;
            }
        }
    }
}

fn connect(port: u16) -> Result<TcpStream, Error> {
    let s = TcpStream::connect(("127.0.0.1", port)).map_err(|e| Error::Startup(format!("connect: {e}")))?;
    s.set_nodelay(true)?;
    Ok(s)
}

/// Runs the configured system in real time.
pub fn run_wall(cfg: &RunConfig) -> Result<RunReport, Error> {
    cfg.validate().map_err(Error::Config)?;
    let spec = cfg.task_spec();
    let layout = spec.layout();
    let seeds = SeedTree::new(cfg.seed);
    let shared = Arc::new(Shared {
        origin: Instant::now(),
        finished: AtomicBool::new(false),
        latest: Mutex::new(None),
        latest_version: AtomicU64::new(0),
        stats: Mutex::new(RunStats::default()),
    });
    let actor_version = Arc::new(AtomicU64::new(0));
    let cap = spec.max_episode_steps as usize;
    let warmup = if cfg.algo == Algo::Sac { cfg.sac.warmup_steps } else { 0 };

    // The actor's initial weights come from the same draw as the learner's.
    let mut init = seeds.stream(Stream::PolicyInit);
    let (learner, net) = match cfg.mode {
        Mode::LocalOnly => {
            let (l, net) = LearnerEnd::new(cfg, &spec, layout, &seeds, &shared, &mut init);
            (Some(l), net)
        }
        _ => match cfg.algo {
            Algo::Sac => (None, SacParams::new(&layout, &spec.action_bounds, &cfg.sac, &mut init).actor),
            Algo::Ppo => (None, PpoParams::new(&layout, &spec.action_bounds, &cfg.ppo, &mut init).actor),
        },
    };
    let shape = net.shape();
    let actor = (cfg.mode != Mode::RemoteOnly).then(|| Actor::new(net, &spec.action_bounds, seeds.stream(Stream::ActionNoise), warmup));

    let mut remote = None;
    let mut link = None;
    let mut local_queue = None;
    let staged = Arc::new(Mutex::new(None));
    if cfg.mode != Mode::LocalOnly {
        let listener = TcpListener::bind(("127.0.0.1", cfg.port)).map_err(|e| Error::Startup(format!("bind port {}: {e}", cfg.port)))?;
        let port = listener.local_addr()?.port();
        let side = RemoteSide { cfg: cfg.clone(), spec: spec.clone(), layout, seeds, listener, shared: shared.clone() };
        remote = Some(thread::spawn(move || side.run()));
        let stream = connect(port)?;
        let up_link = Link::new(cfg.link.clone(), seeds.stream(Stream::LinkUplink));
        let (up, writer) = spawn_writer(Dir::Uplink, stream.try_clone()?, up_link, shared.clone());
        let (inbox, reader) = spawn_local_receive(stream, shared.clone(), staged.clone(), actor_version.clone());
        let sender = (cfg.mode == Mode::RemoteLocal).then(|| {
            let (tx, rx) = channel::bounded(cap);
            local_queue = Some(QueueTx::new(tx));
            spawn_local_send(rx, up.clone())
        });
        link = Some(Uplink { up, inbox, writer, reader, sender });
    }

    let mut aip = Aip {
        cfg,
        spec: &spec,
        layout,
        shared: &shared,
        env: Env::new(spec.clone()),
        env_rng: seeds.stream(Stream::Env),
        actor,
        actor_version,
        policy_in: if cfg.mode == Mode::RemoteLocal { PolicyIn::Staged(staged) } else { PolicyIn::Learner },
        staged_ppo: None,
        learner,
        local_queue,
        link: link.as_ref(),
        records: Vec::new(),
        obs_sent: 0,
    };
    let result = aip.handshake(&shape);
    let started = result.is_ok();
    let result = result.and_then(|_| aip.run());
    shared.finished.store(true, Ordering::SeqCst);

    let records = std::mem::take(&mut aip.records);
    let mut errors: Vec<Error> = result.err().into_iter().collect();
    if let Some(mut q) = aip.local_queue.take() {
        if let Err(e) = q.flush() {
            errors.push(e);
        }
        shared.stats().local_queue = q.stats;
    }
    if let Some(l) = aip.learner.take() {
        match l.close() {
            Ok(q) => shared.stats().local_queue = q,
            Err(e) => errors.push(e),
        }
    }
    drop(aip);
    if let Some(l) = link {
        if let Some(h) = l.sender {
            if let Err(e) = join(h) {
                errors.push(e);
            }
        }
        let _ = l.up.send(Payload::Bye);
        drop(l.up);
        for h in [l.writer, l.reader] {
            if let Err(e) = join(h) {
                errors.push(e);
            }
        }
    }
    if let Some(h) = remote {
        if let Err(e) = join(h) {
            // The learner side's own complaint explains a failed handshake best.
            errors.insert(0, e);
        }
    }

    let mut stats = shared.stats().clone();
    stats.end_ns = shared.now().0;
    if !started {
        let e = errors.into_iter().find(|e| matches!(e, Error::Startup(_)));
        return Err(e.unwrap_or_else(|| Error::Startup("handshake failed".into())));
    }
    Ok(RunReport { records, stats, events: Vec::new(), aborted: errors.first().map(|e| e.to_string()) })
}
