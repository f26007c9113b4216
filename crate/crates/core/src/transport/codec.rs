use std::io::{self, Read, Write};
use std::sync::Arc;

use thiserror::Error;

use super::message::{ActCommand, Hello, Message, MessageKind, ObsReport, Payload};
use crate::clock::Timestamp;
use crate::types::{Action, Frame, Fnv1a, Observation, PolicySnapshot, Transition, CHANNELS};

/// `kind + seq + sent_at`.
pub const HEADER_LEN: usize = 1 + 8 + 8;
pub const MAX_FRAME_LEN: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("framing error: {0}")]
    Framing(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("integrity error: {0}")]
    Integrity(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn reals(&mut self, vs: &[f64]) {
        self.u16(u16::try_from(vs.len()).expect("vector too long for the wire"));
        vs.iter().for_each(|&v| self.f32(v));
    }
    fn observation(&mut self, o: &Observation) {
        let (h, w) = (o.frames[0].height(), o.frames[0].width());
        self.u16(h as u16);
        self.u16(w as u16);
        for f in &o.frames {
            f.pixels().iter().for_each(|&p| self.f32(p));
        }
        self.reals(&o.proprio);
        self.reals(&o.prev_action);
    }
    fn transition(&mut self, t: &Transition) {
        self.observation(&t.obs);
        self.reals(&t.action.values);
        self.f32(t.reward);
        self.observation(&t.next_obs);
        self.u8(t.done as u8);
        self.u64(t.episode_id);
        self.u32(t.step_index);
        self.u64(t.produced_at.as_nanos());
        self.f32(t.behavior_log_prob);
        self.u64(t.policy_version);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(WireError::Protocol(format!(
                "body ends early: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f64, WireError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }
    fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(WireError::Protocol(format!("invalid boolean byte {b:#04x}"))),
        }
    }
    fn reals(&mut self) -> Result<Vec<f64>, WireError> {
        let n = self.u16()? as usize;
        (0..n).map(|_| self.f32()).collect()
    }
    fn observation(&mut self) -> Result<Observation, WireError> {
        let h = self.u16()? as usize;
        let w = self.u16()? as usize;
        let mut frame = || -> Result<Arc<Frame>, WireError> {
            let px = (0..h * w * CHANNELS).map(|_| self.f32()).collect::<Result<Vec<_>, _>>()?;
            Ok(Arc::new(Frame::new(h, w, px).expect("length computed from h and w")))
        };
        let frames = [frame()?, frame()?, frame()?];
        Ok(Observation { frames, proprio: self.reals()?, prev_action: self.reals()? })
    }
    fn transition(&mut self) -> Result<Transition, WireError> {
        Ok(Transition {
            obs: self.observation()?,
            action: Action::new(self.reals()?),
            reward: self.f32()?,
            next_obs: self.observation()?,
            done: self.bool()?,
            episode_id: self.u64()?,
            step_index: self.u32()?,
            produced_at: Timestamp(self.u64()?),
            behavior_log_prob: self.f32()?,
            policy_version: self.u64()?,
        })
    }
    fn string(&mut self) -> Result<String, WireError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| WireError::Protocol("task name is not UTF-8".into()))
    }
    fn finish(&self) -> Result<(), WireError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(WireError::Protocol(format!("{} trailing body bytes", self.buf.len() - self.pos)))
        }
    }
}

fn header_digest(kind: u8, seq: u64, sent_at: u64) -> Fnv1a {
    let mut h = Fnv1a::new();
    h.write(&[kind]);
    h.write(&seq.to_be_bytes());
    h.write(&sent_at.to_be_bytes());
    h
}

/// Serialises one message into a complete frame.
pub fn encode(msg: &Message) -> Vec<u8> {
    let mut w = Writer { buf: Vec::with_capacity(64) };
    w.buf.extend_from_slice(&[0; 4]);
    let kind = msg.kind() as u8;
    w.buf.push(kind);
    w.buf.extend_from_slice(&msg.seq.to_be_bytes());
    w.buf.extend_from_slice(&msg.sent_at.as_nanos().to_be_bytes());
    match &msg.payload {
        Payload::Hello(h) => {
            let name = h.task.as_bytes();
            w.u16(name.len() as u16);
            w.buf.extend_from_slice(name);
            w.u32(h.action_dim);
            w.u32(h.proprio_dim);
            w.u32(h.frame_h);
            w.u32(h.frame_w);
            w.u64(h.cycle_ns);
            w.u32(h.max_episode_steps);
            w.u16(h.actor_shape.len() as u16);
            h.actor_shape.iter().for_each(|&d| w.u32(d));
        }
        Payload::Obs(o) => {
            w.observation(&o.obs);
            w.u64(o.episode_id);
            w.u32(o.step);
            w.f32(o.reward);
            w.u8(o.done as u8);
        }
        Payload::Act(a) => {
            w.u64(a.obs_seq);
            w.reals(&a.action);
            w.u64(a.policy_version);
            w.f32(a.log_prob);
        }
        Payload::Transitions(ts) => {
            w.u32(ts.len() as u32);
            ts.iter().for_each(|t| w.transition(t));
        }
        Payload::Policy(p) => {
            w.u64(p.version);
            w.u32(p.weights.len() as u32);
            for x in p.weights.iter() {
                w.buf.extend_from_slice(&x.to_le_bytes());
            }
            w.u64(p.checksum);
            // Digest over header and body so that no single flipped bit
            // anywhere past the length field goes unnoticed.
            let mut d = Fnv1a::new();
            d.write(&w.buf[4..]);
            w.u64(d.finish());
        }
        Payload::Heartbeat | Payload::Bye => {}
    }
    let len = u32::try_from(w.buf.len() - 4).expect("frame exceeds u32 length");
    w.buf[..4].copy_from_slice(&len.to_be_bytes());
    w.buf
}

fn decode_body(kind: MessageKind, seq: u64, sent_at: u64, body: &[u8]) -> Result<Payload, WireError> {
    let mut r = Reader { buf: body, pos: 0 };
    let payload = match kind {
        MessageKind::Hello => {
            let task = r.string()?;
            let action_dim = r.u32()?;
            let proprio_dim = r.u32()?;
            let frame_h = r.u32()?;
            let frame_w = r.u32()?;
            let cycle_ns = r.u64()?;
            let max_episode_steps = r.u32()?;
            let n = r.u16()? as usize;
            let actor_shape = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
            Payload::Hello(Hello { task, action_dim, proprio_dim, frame_h, frame_w, cycle_ns, max_episode_steps, actor_shape })
        }
        MessageKind::Obs => Payload::Obs(ObsReport {
            obs: r.observation()?,
            episode_id: r.u64()?,
            step: r.u32()?,
            reward: r.f32()?,
            done: r.bool()?,
        }),
        MessageKind::Act => Payload::Act(ActCommand {
            obs_seq: r.u64()?,
            action: r.reals()?,
            policy_version: r.u64()?,
            log_prob: r.f32()?,
        }),
        MessageKind::Transitions => {
            let n = r.u32()? as usize;
            let ts = (0..n).map(|_| r.transition()).collect::<Result<_, _>>()?;
            Payload::Transitions(ts)
        }
        MessageKind::Policy => {
            if body.len() < 8 {
                return Err(WireError::Protocol("policy body too short".into()));
            }
            let (content, digest) = body.split_at(body.len() - 8);
            let mut d = header_digest(kind as u8, seq, sent_at);
            d.write(content);
            if d.finish() != u64::from_le_bytes(digest.try_into().unwrap()) {
                return Err(WireError::Integrity("policy frame digest mismatch"));
            }
            let version = r.u64()?;
            let n = r.u32()? as usize;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| WireError::Protocol("weight count overflow".into()))?)?;
            let weights: Arc<[f32]> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let checksum = r.u64()?;
            let _frame_digest = r.u64()?;
            let snap = PolicySnapshot { version, weights, checksum };
            if !snap.verify() {
                return Err(WireError::Integrity("policy weight checksum mismatch"));
            }
            Payload::Policy(snap)
        }
        MessageKind::Heartbeat => Payload::Heartbeat,
        MessageKind::Bye => Payload::Bye,
    };
    r.finish()?;
    Ok(payload)
}

/// Decodes the first frame in `buf`, returning the message and the number
/// of bytes consumed, or `None` if `buf` does not yet hold a whole frame.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(Message, usize)>, WireError> {
    if buf.len() < 4 {
        return Ok(None);
    }
    let len = u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize;
    if len < HEADER_LEN {
        return Err(WireError::Framing(format!("length field {len} shorter than the header")));
    }
    if len > MAX_FRAME_LEN {
        return Err(WireError::Framing(format!("length field {len} exceeds {MAX_FRAME_LEN}")));
    }
    if buf.len() < 4 + len {
        return Ok(None);
    }
    let frame = &buf[4..4 + len];
    let kind_byte = frame[0];
    let kind = MessageKind::from_byte(kind_byte)
        .ok_or_else(|| WireError::Protocol(format!("unknown message kind {kind_byte:#04x}")))?;
    let seq = u64::from_be_bytes(frame[1..9].try_into().unwrap());
    let sent_at = u64::from_be_bytes(frame[9..17].try_into().unwrap());
    let payload = decode_body(kind, seq, sent_at, &frame[HEADER_LEN..])?;
    Ok(Some((Message { seq, sent_at: Timestamp(sent_at), payload }, 4 + len)))
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    match decode_frame(bytes)? {
        Some((m, used)) if used == bytes.len() => Ok(m),
        Some((_, used)) => Err(WireError::Framing(format!("{} bytes after the frame", bytes.len() - used))),
        None => Err(WireError::Framing(format!("truncated frame: {} bytes", bytes.len()))),
    }
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> Result<(), WireError> {
    w.write_all(&encode(msg))?;
    Ok(())
}

/// Reads one frame from a stream; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Message>, WireError> {
    let mut len_buf = [0u8; 4];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if !(HEADER_LEN..=MAX_FRAME_LEN).contains(&len) {
        return Err(WireError::Framing(format!("bad length field {len}")));
    }
    let mut buf = vec![0u8; 4 + len];
    buf[..4].copy_from_slice(&len_buf);
    r.read_exact(&mut buf[4..]).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Framing("stream ended inside a frame".into()),
        _ => WireError::Io(e),
    })?;
    decode(&buf).map(Some)
}

#[cfg(test)]
mod tests;
