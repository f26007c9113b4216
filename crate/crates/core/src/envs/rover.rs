use std::f64::consts::PI;

use rand::Rng;

use crate::types::Frame;

/// Arena extent along x (m).
pub const ARENA_W: f64 = 1.10;
/// Arena extent along y (m).
pub const ARENA_H: f64 = 0.70;
/// Body radius; walls stop the centre this far from them.
pub const ROVER_RADIUS: f64 = 0.17;
/// Distance between the wheels (m).
pub const WHEELBASE: f64 = 0.235;
/// mm/s per wheel.
pub const WHEEL_LIMIT: f64 = 150.0;
/// The episode ends once the patch covers more than this share of pixels.
pub const TERMINATION_FRACTION: f64 = 0.12;

/// Centre of the green patch on the east wall.
const PATCH: [f64; 2] = [ARENA_W, ARENA_H / 2.0];
const PATCH_SIDE: f64 = 0.10;
/// Camera sits this far ahead of the body centre.
const CAMERA_OFFSET: f64 = 0.10;
const HALF_FOV: f64 = 35.0 * PI / 180.0;

/// −1 every step.
pub fn rover_reward() -> f64 {
    -1.0
}

/// Share of pixels that are dominantly green.
pub fn target_fraction(frame: &Frame) -> f64 {
    let n = frame.pixels().chunks_exact(3).filter(|p| p[1] > 0.5 && p[1] > p[0] && p[1] > p[2]).count();
    n as f64 / (frame.height() * frame.width()) as f64
}

fn wrap(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t == -PI {
        PI
    } else {
        t
    }
}

/// Differential-drive robot in a walled arena with a target patch on one wall.
#[derive(Clone, Debug, PartialEq)]
pub struct RoverState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// Last applied wheel speeds (mm/s), left then right.
    pub wheels: [f64; 2],
}

impl RoverState {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        RoverState { x, y, heading: wrap(heading), wheels: [0.0; 2] }
    }

    /// Uniform over the reachable interior, uniform heading.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let x = rng.random_range(ROVER_RADIUS..ARENA_W - ROVER_RADIUS);
        let y = rng.random_range(ROVER_RADIUS..ARENA_H - ROVER_RADIUS);
        Self::new(x, y, rng.random_range(-PI..PI))
    }

    /// Exact unicycle arc for one cycle, then wall clamping.
    pub fn integrate(&mut self, left: f64, right: f64, dt: f64) {
        self.wheels = [left, right];
        let v = (left + right) / 2.0 / 1000.0;
        let w = (right - left) / 1000.0 / WHEELBASE;
        let th = self.heading;
        if w.abs() < 1e-12 {
            self.x += v * dt * th.cos();
            self.y += v * dt * th.sin();
        } else {
            let th2 = th + w * dt;
            self.x += v / w * (th2.sin() - th.sin());
            self.y -= v / w * (th2.cos() - th.cos());
        }
        self.heading = wrap(th + w * dt);
        self.x = self.x.clamp(ROVER_RADIUS, ARENA_W - ROVER_RADIUS);
        self.y = self.y.clamp(ROVER_RADIUS, ARENA_H - ROVER_RADIUS);
    }

    pub fn proprio(&self) -> Vec<f64> {
        vec![self.x, self.y, self.heading.sin(), self.heading.cos()]
    }

    /// Forward-facing pinhole view; the patch is a green square whose side
    /// scales with 1/depth, so its area scales with 1/depth².
    pub fn render(&self, height: usize, width: usize) -> Frame {
        let mut frame = Frame::blank(height, width);
        let (c, s) = (self.heading.cos(), self.heading.sin());
        let cam = [self.x + CAMERA_OFFSET * c, self.y + CAMERA_OFFSET * s];
        let rel = [PATCH[0] - cam[0], PATCH[1] - cam[1]];
        let depth = rel[0] * c + rel[1] * s;
        let lateral = -rel[0] * s + rel[1] * c;
        if depth < 1e-3 {
            return frame;
        }
        let focal = width as f64 / 2.0 / HALF_FOV.tan();
        let cx = width as f64 / 2.0 - focal * lateral / depth;
        let cy = height as f64 / 2.0;
        let half = PATCH_SIDE * focal / depth / 2.0;
        for i in 0..height {
            let py = i as f64 + 0.5;
            if (py - cy).abs() > half {
                continue;
            }
            for j in 0..width {
                let px = j as f64 + 0.5;
                if (px - cx).abs() <= half {
                    frame.set_pixel(i, j, [0.0, 1.0, 0.0]);
                }
            }
        }
        frame
    }
}
