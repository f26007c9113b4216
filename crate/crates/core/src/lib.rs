//! Remote-local distributed real-time reinforcement learning.
//!
//! The crate models a robot-side ("local") computer and a learner-side
//! ("remote") computer joined by a lossy, laggy link. Three placements of the
//! agent processes are supported:
//!
//! - **local-only**: everything runs next to the robot;
//! - **remote-only**: the local host relays observations and actions, the
//!   remote host computes actions and learns;
//! - **remote-local**: actions are computed locally from periodically
//!   refreshed policy snapshots while learning happens remotely.
//!
//! Everything runs on a deterministic virtual clock by default, so timing
//! effects (missed deadlines, snapshot staleness, throttled updates) are
//! reproducible experiments rather than hardware accidents.

pub mod batch;
pub mod clock;
pub mod envs;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod ppo;
pub mod rng;
pub mod sac;
pub mod transport;
pub mod types;

#[cfg(test)]
mod testutil;

pub use clock::{Clock, ClockMode, Timestamp};
pub use error::{Error, ShapeError};
pub use metrics::MetricRecord;
pub use rng::{SeedTree, Stream};
pub use types::{
    flatten_observation, Action, ActionBounds, Frame, ObsLayout, Observation, PolicySnapshot,
    Transition,
};
