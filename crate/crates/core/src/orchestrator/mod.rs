//! Process placement, run configuration and the two run loops: a
//! single-threaded discrete-event simulation on the virtual clock, and a
//! threaded wall-clock variant over TCP loopback.

mod config;
mod sim;
mod topology;
mod wall;

use std::fmt;

use crate::clock::{ClockMode, Timestamp};
use crate::envs::TaskSpec;
use crate::error::Error;
use crate::metrics::MetricRecord;
use crate::nn::DenseNet;
use crate::transport::{Hello, MessageKind, QueueStats};
use crate::types::PolicySnapshot;

pub use config::{parse_entries, ConfigError, Entry, RunConfig, KEYS};
pub use sim::Simulation;
pub use topology::{table_placement, Algo, ComputeModel, Host, Mode, ModeTopology, Placement, Process};
pub use wall::run_wall;

/// Local → remote is the uplink.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dir {
    Uplink,
    Downlink,
}

impl Dir {
    pub fn name(self) -> &'static str {
        match self {
            Dir::Uplink => "up",
            Dir::Downlink => "down",
        }
    }
}

/// One entry of a run's event log.
#[derive(Clone, Debug, PartialEq)]
pub enum LogEvent {
    /// An environment step. `version` names the snapshot that computed the
    /// applied action, `None` when the previous action was held.
    Tick { at: Timestamp, step: u64, episode: u64, version: Option<u64>, action: Vec<f64> },
    Inference { at: Timestamp, host: Host, obs_seq: u64, version: u64 },
    SnapshotApplied { at: Timestamp, host: Host, version: u64 },
    SnapshotRejected { at: Timestamp, version: u64, reason: &'static str },
    UpdateStart { at: Timestamp, host: Host },
    UpdateDone { at: Timestamp, version: u64 },
    /// A transition entered the replay buffer or rollout.
    Insert { at: Timestamp, episode: u64, step_index: u32, queued_at: Timestamp },
    Send { at: Timestamp, dir: Dir, kind: MessageKind, seq: u64, bytes: usize, deliver_at: Option<Timestamp> },
    Deliver { at: Timestamp, dir: Dir, kind: MessageKind, seq: u64 },
    EpisodeEnd { at: Timestamp, episode: u64, ret: f64, steps: u64 },
}

impl LogEvent {
    pub fn at(&self) -> Timestamp {
        match self {
            LogEvent::Tick { at, .. }
            | LogEvent::Inference { at, .. }
            | LogEvent::SnapshotApplied { at, .. }
            | LogEvent::SnapshotRejected { at, .. }
            | LogEvent::UpdateStart { at, .. }
            | LogEvent::UpdateDone { at, .. }
            | LogEvent::Insert { at, .. }
            | LogEvent::Send { at, .. }
            | LogEvent::Deliver { at, .. }
            | LogEvent::EpisodeEnd { at, .. } => *at,
        }
    }
}

impl fmt::Display for LogEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogEvent::Tick { at, step, episode, version, action } => {
                write!(f, "{} tick step={step} ep={episode} v=", at.0)?;
                match version {
                    Some(v) => write!(f, "{v}")?,
                    None => f.write_str("held")?,
                }
                f.write_str(" a=")?;
                for (i, x) in action.iter().enumerate() {
                    if i > 0 {
                        f.write_str(":")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
            LogEvent::Inference { at, host, obs_seq, version } => {
                write!(f, "{} infer host={} obs={obs_seq} v={version}", at.0, host.name())
            }
            LogEvent::SnapshotApplied { at, host, version } => {
                write!(f, "{} apply host={} v={version}", at.0, host.name())
            }
            LogEvent::SnapshotRejected { at, version, reason } => write!(f, "{} reject v={version} {reason}", at.0),
            LogEvent::UpdateStart { at, host } => write!(f, "{} update_start host={}", at.0, host.name()),
            LogEvent::UpdateDone { at, version } => write!(f, "{} update_done v={version}", at.0),
            LogEvent::Insert { at, episode, step_index, queued_at } => {
                write!(f, "{} insert ep={episode} i={step_index} queued={}", at.0, queued_at.0)
            }
            LogEvent::Send { at, dir, kind, seq, bytes, deliver_at } => {
                write!(f, "{} send {} {} seq={seq} bytes={bytes} ", at.0, dir.name(), kind.name())?;
                match deliver_at {
                    Some(t) => write!(f, "eta={}", t.0),
                    None => f.write_str("dropped"),
                }
            }
            LogEvent::Deliver { at, dir, kind, seq } => write!(f, "{} deliver {} {} seq={seq}", at.0, dir.name(), kind.name()),
            LogEvent::EpisodeEnd { at, episode, ret, steps } => {
                write!(f, "{} episode_end ep={episode} return={ret} steps={steps}", at.0)
            }
        }
    }
}

/// Counters gathered over one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub steps: u64,
    pub episodes: u64,
    pub missed_deadlines: u64,
    pub updates: u64,
    /// Learner-side latest version minus the version that chose each fresh action.
    pub staleness_sum: u64,
    pub staleness_count: u64,
    pub staleness_max: u64,
    /// Indexed by [`MessageKind`] byte.
    pub messages_sent: [u64; 16],
    pub bytes_sent: u64,
    pub messages_dropped: u64,
    /// OBS and ACT messages put on the link.
    pub inference_path_messages: u64,
    pub transitions_produced: u64,
    pub transitions_ingested: u64,
    /// PPO: transitions that arrived while an update was running.
    pub transitions_discarded: u64,
    /// Lost with a dropped message.
    pub transitions_lost: u64,
    pub snapshots_applied: u64,
    pub snapshots_rejected: u64,
    pub local_queue: QueueStats,
    pub remote_queue: QueueStats,
    /// Longest wait between a transition reaching the learner-side queue and
    /// its insertion.
    pub max_insert_wait_ns: u64,
    /// Virtual time of the first tick.
    pub start_ns: u64,
    pub end_ns: u64,
}

impl RunStats {
    pub fn sent(&self, kind: MessageKind) -> u64 {
        self.messages_sent[kind as usize]
    }

    pub fn mean_staleness(&self) -> f64 {
        if self.staleness_count == 0 {
            0.0
        } else {
            self.staleness_sum as f64 / self.staleness_count as f64
        }
    }

    pub fn missed_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.missed_deadlines as f64 / self.steps as f64
        }
    }

    /// `key=value` lines, stable order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("steps", self.steps.to_string());
        kv("episodes", self.episodes.to_string());
        kv("missed_deadlines", self.missed_deadlines.to_string());
        kv("missed_rate", self.missed_rate().to_string());
        kv("updates", self.updates.to_string());
        kv("mean_staleness", self.mean_staleness().to_string());
        kv("max_staleness", self.staleness_max.to_string());
        for k in MessageKind::ALL {
            kv(&format!("sent.{}", k.name()), self.sent(k).to_string());
        }
        kv("bytes_sent", self.bytes_sent.to_string());
        kv("messages_dropped", self.messages_dropped.to_string());
        kv("inference_path_messages", self.inference_path_messages.to_string());
        kv("transitions_produced", self.transitions_produced.to_string());
        kv("transitions_ingested", self.transitions_ingested.to_string());
        kv("transitions_discarded", self.transitions_discarded.to_string());
        kv("transitions_lost", self.transitions_lost.to_string());
        kv("snapshots_applied", self.snapshots_applied.to_string());
        kv("snapshots_rejected", self.snapshots_rejected.to_string());
        kv("local_queue.max_occupancy", self.local_queue.max_occupancy.to_string());
        kv("local_queue.blocked_pushes", self.local_queue.blocked_pushes.to_string());
        kv("remote_queue.max_occupancy", self.remote_queue.max_occupancy.to_string());
        kv("remote_queue.blocked_pushes", self.remote_queue.blocked_pushes.to_string());
        kv("max_insert_wait_ns", self.max_insert_wait_ns.to_string());
        s
    }
}

/// Everything a finished (or aborted) run produced.
#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub records: Vec<MetricRecord>,
    pub stats: RunStats,
    /// Empty unless `log.events` is on.
    pub events: Vec<LogEvent>,
    /// Why the run stopped early, if it did. Records up to that point are kept.
    pub aborted: Option<String>,
}

impl RunReport {
    pub fn event_log(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&e.to_string());
            s.push('\n');
        }
        s
    }
}

/// Builds and runs the configured system on the configured clock.
pub fn run(cfg: &RunConfig) -> Result<RunReport, Error> {
    match cfg.clock {
        ClockMode::Virtual => Simulation::new(cfg.clone())?.run(),
        ClockMode::Wall => run_wall(cfg),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyncOutcome {
    Applied,
    /// Version not newer than the actor's.
    Stale,
    /// Checksum mismatch.
    Corrupt,
}

/// Replaces the actor's weights with `snapshot` if it verifies and is newer.
pub fn sync_policy(actor: &mut DenseNet, current_version: &mut u64, snapshot: &PolicySnapshot) -> Result<SyncOutcome, Error> {
    if !snapshot.verify() {
        return Ok(SyncOutcome::Corrupt);
    }
    if snapshot.version <= *current_version {
        return Ok(SyncOutcome::Stale);
    }
    actor.set_params(&snapshot.weights_f64())?;
    *current_version = snapshot.version;
    Ok(SyncOutcome::Applied)
}

pub fn hello_for(spec: &TaskSpec, actor_shape: &[usize]) -> Hello {
    Hello {
        task: spec.name().to_string(),
        action_dim: spec.action_dim() as u32,
        proprio_dim: spec.proprio_dim as u32,
        frame_h: spec.frame_h as u32,
        frame_w: spec.frame_w as u32,
        cycle_ns: crate::clock::duration_nanos(spec.cycle_time),
        max_episode_steps: spec.max_episode_steps,
        actor_shape: actor_shape.iter().map(|&n| n as u32).collect(),
    }
}

/// Both ends must describe the same task and networks.
pub fn check_handshake(local: &Hello, remote: &Hello) -> Result<(), Error> {
    if local == remote {
        Ok(())
    } else {
        Err(Error::Startup(format!("handshake shape mismatch: local {local:?}, remote {remote:?}")))
    }
}
