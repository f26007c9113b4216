//! The wire between the two hosts: message framing, a deterministic link
//! model and bounded transition queues.
//!
//! Frame layout (bit-exact, also used for on-disk episode traces):
//!
//! ```text
//! [u32 BE length][u8 kind][u64 BE seq][u64 BE sent_at ns][body ...]
//! ```
//!
//! `length` counts everything after itself. Bodies store reals as
//! little-endian `f32` and integers little-endian.

mod codec;
mod link;
mod message;
mod queue;

pub use codec::{decode, decode_frame, encode, read_frame, write_frame, WireError, HEADER_LEN, MAX_FRAME_LEN};
pub use link::{Delivery, Jitter, Link, LinkModel};
pub use message::{ActCommand, Hello, Message, MessageKind, ObsReport, Payload};
pub use queue::{BoundedQueue, PushOutcome, QueueStats};
