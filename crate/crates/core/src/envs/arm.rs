use std::f64::consts::PI;

use rand::Rng;

use crate::types::Frame;

/// Home posture; the posture penalty vanishes here.
pub const ARM_HOME: [f64; 5] = [PI, 0.0, 0.0, 0.0, 0.0];
/// rad/s per joint.
pub const ARM_SPEED_LIMIT: f64 = 0.7;
/// Joints 3–5 stay within this distance of home (rad).
pub const ARM_JOINT_LIMIT: f64 = 1.0;
/// Fingertip half-extent on the monitor plane.
pub const FINGERTIP_BOX: f64 = 0.5;
/// Half-width of the camera footprint on the monitor plane.
pub const ARM_VIEW_HALF_WIDTH: f64 = 0.6;
const TARGET_SPAN: f64 = 0.35;
const FOCUS_DISTANCE: f64 = 0.3;

const ALPHA: f64 = 800.0;
const BETA: f64 = 1.0;

/// Centre-weighting matrix for the pixel term of the arm reward.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardWeights {
    height: usize,
    width: usize,
    values: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

fn ramp(i: usize, n: usize) -> f64 {
    if n == 1 {
        1.0
    } else {
        // Same as 1 − |2i/(n−1) − 1|, written to be exactly mirror-symmetric.
        (2 * i.min(n - 1 - i)) as f64 / (n - 1) as f64
    }
}

impl RewardWeights {
    /// `W[i][j] = (1 − |2i/(h−1) − 1|)·(1 − |2j/(w−1) − 1|)`, α = 800, β = 1.
    pub fn triangular(height: usize, width: usize) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                values.push(ramp(i, height) * ramp(j, width));
            }
        }
        RewardWeights { height, width, values, alpha: ALPHA, beta: BETA }
    }

    /// Panics unless every entry lies in `[0, 1]`.
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), height * width);
        assert!(values.iter().all(|w| (0.0..=1.0).contains(w)), "weights must lie in [0, 1]");
        RewardWeights { height, width, values, alpha: ALPHA, beta: BETA }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Target-colour mask: red above 0.5 and strictly above green and blue.
pub fn detect_mask(frame: &Frame) -> Vec<bool> {
    frame
        .pixels()
        .chunks_exact(3)
        .map(|p| p[0] > 0.5 && p[0] > p[1] && p[0] > p[2])
        .collect()
}

/// `α·Σ(M∘W)/(hw) − β·(|π − ω₁ − ω₂ − ω₃| + |ω₄ + ω₅|)`.
pub fn arm_reward(frame: &Frame, joints: &[f64; 5], weights: &RewardWeights) -> f64 {
    let hw = (frame.height() * frame.width()) as f64;
    let seen: f64 = detect_mask(frame).iter().zip(weights.values()).filter(|(m, _)| **m).map(|(_, w)| w).sum();
    let posture = (PI - joints[0] - joints[1] - joints[2]).abs() + (joints[3] + joints[4]).abs();
    weights.alpha * seen / hw - weights.beta * posture
}

/// Five-joint arm whose first two joints pan and tilt a fingertip camera over
/// a monitor showing the target.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmState {
    pub joints: [f64; 5],
    pub velocities: [f64; 5],
    pub target: [f64; 2],
}

impl ArmState {
    pub fn home(target: [f64; 2]) -> Self {
        ArmState { joints: ARM_HOME, velocities: [0.0; 5], target }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let t = [rng.random_range(-TARGET_SPAN..=TARGET_SPAN), rng.random_range(-TARGET_SPAN..=TARGET_SPAN)];
        Self::home(t)
    }

    /// Fingertip position on the monitor plane.
    pub fn fingertip(&self) -> [f64; 2] {
        [self.joints[0] - ARM_HOME[0], self.joints[1] - ARM_HOME[1]]
    }

    pub fn misalignment(&self) -> f64 {
        let f = self.fingertip();
        (self.target[0] - f[0]).hypot(self.target[1] - f[1])
    }

    /// Euler step, then projection onto the fingertip box and joint limits.
    /// Stored velocities are the ones actually realised.
    pub fn integrate(&mut self, cmd: &[f64], dt: f64) {
        let before = self.joints;
        for (j, (w, v)) in self.joints.iter_mut().zip(cmd).enumerate() {
            let limit = if j < 2 { FINGERTIP_BOX } else { ARM_JOINT_LIMIT };
            *w = (*w + v * dt).clamp(ARM_HOME[j] - limit, ARM_HOME[j] + limit);
        }
        for j in 0..5 {
            self.velocities[j] = (self.joints[j] - before[j]) / dt;
        }
    }

    pub fn proprio(&self) -> Vec<f64> {
        self.joints.iter().chain(&self.velocities).copied().collect()
    }

    /// Disk radius in pixels: grows from 0.6 to 3 (at 8×8) as the fingertip
    /// closes in on the target.
    pub fn disk_radius(&self, height: usize, width: usize) -> f64 {
        let focus = (1.0 - self.misalignment() / FOCUS_DISTANCE).max(0.0);
        (0.6 + 2.4 * focus) * height.min(width) as f64 / 8.0
    }

    /// Camera view centred on the fingertip; the target is a red disk on black.
    pub fn render(&self, height: usize, width: usize) -> Frame {
        let f = self.fingertip();
        let (dx, dy) = (self.target[0] - f[0], self.target[1] - f[1]);
        let scale = height.min(width) as f64 / 2.0 / ARM_VIEW_HALF_WIDTH;
        let cx = width as f64 / 2.0 + dx * scale;
        let cy = height as f64 / 2.0 - dy * scale;
        let r = self.disk_radius(height, width);
        let mut frame = Frame::blank(height, width);
        let rows = ((cy - r).floor().max(0.0) as usize)..((cy + r).ceil().clamp(0.0, height as f64) as usize);
        for i in rows {
            let cols = ((cx - r).floor().max(0.0) as usize)..((cx + r).ceil().clamp(0.0, width as f64) as usize);
            for j in cols {
                let (py, px) = (i as f64 + 0.5 - cy, j as f64 + 0.5 - cx);
                if px * px + py * py <= r * r {
                    frame.set_pixel(i, j, [1.0, 0.0, 0.0]);
                }
            }
        }
        frame
    }
}

#[cfg(test)]
pub(crate) fn random_mask<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Frame {
    let px = (0..h * w).flat_map(|_| if rng.random_bool(0.5) { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 0.0] }).collect();
    Frame::new(h, w, px).unwrap()
}
