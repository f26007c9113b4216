use crate::clock::Timestamp;
use crate::types::{Observation, PolicySnapshot, Transition};

/// Kind tags. `Policy` is chosen at Hamming distance ≥ 2 from every other
/// tag, so a single flipped bit can never turn a policy frame into another
/// valid kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Hello = 0x01,
    Obs = 0x02,
    Act = 0x03,
    Transitions = 0x04,
    Heartbeat = 0x05,
    Bye = 0x06,
    Policy = 0x0F,
}

impl MessageKind {
    pub const ALL: [MessageKind; 7] = [
        MessageKind::Hello,
        MessageKind::Obs,
        MessageKind::Act,
        MessageKind::Transitions,
        MessageKind::Heartbeat,
        MessageKind::Bye,
        MessageKind::Policy,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| *k as u8 == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Hello => "HELLO",
            MessageKind::Obs => "OBS",
            MessageKind::Act => "ACT",
            MessageKind::Transitions => "TRANSITIONS",
            MessageKind::Heartbeat => "HEARTBEAT",
            MessageKind::Bye => "BYE",
            MessageKind::Policy => "POLICY",
        }
    }
}

/// Session handshake: task and network shapes. Both sides must agree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hello {
    pub task: String,
    pub action_dim: u32,
    pub proprio_dim: u32,
    pub frame_h: u32,
    pub frame_w: u32,
    pub cycle_ns: u64,
    pub max_episode_steps: u32,
    pub actor_shape: Vec<u32>,
}

/// Observation relayed local → remote when the remote host computes actions.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsReport {
    pub obs: Observation,
    pub episode_id: u64,
    /// Steps already taken in this episode; 0 right after a reset.
    pub step: u32,
    /// Reward and termination of the step that produced `obs` (meaningless when `step == 0`).
    pub reward: f64,
    pub done: bool,
}

/// Action computed remotely for the observation sent with `obs_seq`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActCommand {
    pub obs_seq: u64,
    pub action: Vec<f64>,
    pub policy_version: u64,
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Hello(Hello),
    Obs(ObsReport),
    Act(ActCommand),
    Transitions(Vec<Transition>),
    Policy(PolicySnapshot),
    Heartbeat,
    Bye,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub seq: u64,
    pub sent_at: Timestamp,
    pub payload: Payload,
}

impl Message {
    pub fn new(seq: u64, sent_at: Timestamp, payload: Payload) -> Self {
        Message { seq, sent_at, payload }
    }

    pub fn kind(&self) -> MessageKind {
        match self.payload {
            Payload::Hello(_) => MessageKind::Hello,
            Payload::Obs(_) => MessageKind::Obs,
            Payload::Act(_) => MessageKind::Act,
            Payload::Transitions(_) => MessageKind::Transitions,
            Payload::Policy(_) => MessageKind::Policy,
            Payload::Heartbeat => MessageKind::Heartbeat,
            Payload::Bye => MessageKind::Bye,
        }
    }
}
