//! Value types exchanged between the agent processes.

use std::sync::Arc;

use crate::clock::Timestamp;
use crate::error::ShapeError;

/// Number of stacked camera frames in every observation.
pub const FRAME_STACK: usize = 3;
/// Colour channels per pixel.
pub const CHANNELS: usize = 3;

/// One `h × w × 3` image, row-major and channel-last, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, ShapeError> {
        ShapeError::check("frame pixels", height * width * CHANNELS, pixels.len())?;
        Ok(Frame { height, width, pixels })
    }

    pub fn blank(height: usize, width: usize) -> Self {
        Frame { height, width, pixels: vec![0.0; height * width * CHANNELS] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let o = (row * self.width + col) * CHANNELS;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let o = (row * self.width + col) * CHANNELS;
        self.pixels[o..o + CHANNELS].copy_from_slice(&rgb);
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|p| (0.0..=1.0).contains(p))
    }
}

/// Dimensions of an observation for one task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ObsLayout {
    pub frame_h: usize,
    pub frame_w: usize,
    pub proprio_dim: usize,
    pub action_dim: usize,
}

impl ObsLayout {
    pub fn frame_len(&self) -> usize {
        self.frame_h * self.frame_w * CHANNELS
    }

    /// `3·h·w·3 + |proprio| + |prev_action|`.
    pub fn flat_len(&self) -> usize {
        FRAME_STACK * self.frame_len() + self.proprio_dim + self.action_dim
    }
}

/// Three stacked frames (oldest first), proprioception and the previous action.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub frames: [Arc<Frame>; FRAME_STACK],
    pub proprio: Vec<f64>,
    pub prev_action: Vec<f64>,
}

impl Observation {
    pub fn zeros(layout: &ObsLayout) -> Self {
        let blank = Arc::new(Frame::blank(layout.frame_h, layout.frame_w));
        Observation {
            frames: [blank.clone(), blank.clone(), blank],
            proprio: vec![0.0; layout.proprio_dim],
            prev_action: vec![0.0; layout.action_dim],
        }
    }

    pub fn validate(&self, layout: &ObsLayout) -> Result<(), ShapeError> {
        for f in &self.frames {
            ShapeError::check("frame height", layout.frame_h, f.height())?;
            ShapeError::check("frame width", layout.frame_w, f.width())?;
        }
        ShapeError::check("proprio length", layout.proprio_dim, self.proprio.len())?;
        ShapeError::check("previous action length", layout.action_dim, self.prev_action.len())
    }

    /// Writes the flat encoding into `out`, which must be `layout.flat_len()` long.
    pub fn flatten_into(&self, layout: &ObsLayout, out: &mut [f64]) -> Result<(), ShapeError> {
        self.validate(layout)?;
        ShapeError::check("flat observation buffer", layout.flat_len(), out.len())?;
        let fl = layout.frame_len();
        for (k, f) in self.frames.iter().enumerate() {
            out[k * fl..(k + 1) * fl].copy_from_slice(f.pixels());
        }
        let p0 = FRAME_STACK * fl;
        out[p0..p0 + layout.proprio_dim].copy_from_slice(&self.proprio);
        out[p0 + layout.proprio_dim..].copy_from_slice(&self.prev_action);
        Ok(())
    }
}

/// Frames oldest→newest (row-major, channel-last), then proprio, then the
/// previous action.
pub fn flatten_observation(obs: &Observation, layout: &ObsLayout) -> Result<Vec<f64>, ShapeError> {
    let mut out = vec![0.0; layout.flat_len()];
    obs.flatten_into(layout, &mut out)?;
    Ok(out)
}

/// Per-dimension actuator limits.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ActionBounds {
    pub fn symmetric(dim: usize, limit: f64) -> Self {
        ActionBounds { lo: vec![-limit; dim], hi: vec![limit; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.len() == self.dim()
            && values.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn clamp(&self, values: &mut [f64]) {
        for (v, (lo, hi)) in values.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// Actuator command vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub values: Vec<f64>,
}

impl Action {
    pub fn new(values: Vec<f64>) -> Self {
        Action { values }
    }

    pub fn zeros(dim: usize) -> Self {
        Action { values: vec![0.0; dim] }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `(S_t, A_t, R_{t+1}, S_{t+1}, done)` plus bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
    pub episode_id: u64,
    pub step_index: u32,
    pub produced_at: Timestamp,
    /// Log-density of `action` under the policy that was acting, recorded
    /// when the action was taken. Only on-policy learners read it.
    pub behavior_log_prob: f64,
    /// Snapshot version of the acting policy.
    pub policy_version: u64,
}

/// Versioned, immutable copy of actor weights as shipped to the actor side.
///
/// Weights are stored at wire precision (`f32`).
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySnapshot {
    pub version: u64,
    pub weights: Arc<[f32]>,
    pub checksum: u64,
}

impl PolicySnapshot {
    pub fn from_f64(version: u64, params: &[f64]) -> Self {
        let weights: Arc<[f32]> = params.iter().map(|&w| w as f32).collect();
        let checksum = weights_checksum(&weights);
        PolicySnapshot { version, weights, checksum }
    }

    pub fn verify(&self) -> bool {
        weights_checksum(&self.weights) == self.checksum
    }

    pub fn weights_f64(&self) -> Vec<f64> {
        self.weights.iter().map(|&w| w as f64).collect()
    }
}

/// FNV-1a over the little-endian bytes of the weights.
pub fn weights_checksum(weights: &[f32]) -> u64 {
    let mut h = Fnv1a::new();
    for w in weights {
        h.write(&w.to_le_bytes());
    }
    h.finish()
}

/// 64-bit FNV-1a. Any single-bit change in a fixed-length input changes
/// the digest, since every round is a bijection of the running state.
#[derive(Clone, Copy, Debug)]
pub struct Fnv1a(u64);

impl Fnv1a {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        Fnv1a(Self::OFFSET)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

/// Rounds through `f32`, the precision used on the wire.
pub fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

pub fn quantize_slice(xs: &mut [f64]) {
    for x in xs {
        *x = quantize(*x);
    }
}
