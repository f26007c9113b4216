//! Simulated real-time tasks. Each environment advances exactly one action
//! cycle per [`Env::tick`], whether or not a fresh action arrived.

mod arm;
mod rover;

use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;

pub use arm::{arm_reward, detect_mask, ArmState, RewardWeights, ARM_HOME, ARM_JOINT_LIMIT, ARM_SPEED_LIMIT, ARM_VIEW_HALF_WIDTH, FINGERTIP_BOX};
pub use rover::{rover_reward, target_fraction, RoverState, ARENA_H, ARENA_W, ROVER_RADIUS, TERMINATION_FRACTION, WHEELBASE, WHEEL_LIMIT};

use crate::types::{quantize, Action, ActionBounds, Frame, ObsLayout, Observation, FRAME_STACK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    PixelReacher,
    ArenaRover,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::PixelReacher => "pixel_reacher",
            TaskKind::ArenaRover => "arena_rover",
        }
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pixel_reacher" => Ok(TaskKind::PixelReacher),
            "arena_rover" => Ok(TaskKind::ArenaRover),
            _ => Err(format!("unknown task `{s}` (pixel_reacher | arena_rover)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub action_bounds: ActionBounds,
    pub cycle_time: Duration,
    pub max_episode_steps: u32,
    pub frame_h: usize,
    pub frame_w: usize,
    pub proprio_dim: usize,
}

impl TaskSpec {
    /// 5 joint velocities in ±0.7 rad/s, 40 ms cycle, 100-step episodes.
    pub fn pixel_reacher(frame_h: usize, frame_w: usize) -> Self {
        TaskSpec {
            kind: TaskKind::PixelReacher,
            action_bounds: ActionBounds::symmetric(5, ARM_SPEED_LIMIT),
            cycle_time: Duration::from_millis(40),
            max_episode_steps: 100,
            frame_h,
            frame_w,
            proprio_dim: 10,
        }
    }

    /// 2 wheel speeds in ±150 mm/s, 45 ms cycle, at most 666 steps.
    pub fn arena_rover(frame_h: usize, frame_w: usize) -> Self {
        TaskSpec {
            kind: TaskKind::ArenaRover,
            action_bounds: ActionBounds::symmetric(2, WHEEL_LIMIT),
            cycle_time: Duration::from_millis(45),
            max_episode_steps: 666,
            frame_h,
            frame_w,
            proprio_dim: 4,
        }
    }

    pub fn new(kind: TaskKind, frame_h: usize, frame_w: usize) -> Self {
        match kind {
            TaskKind::PixelReacher => Self::pixel_reacher(frame_h, frame_w),
            TaskKind::ArenaRover => Self::arena_rover(frame_h, frame_w),
        }
    }

    /// Camera resolution of the physical setups; only rendering cost changes.
    pub fn full_resolution(kind: TaskKind) -> Self {
        match kind {
            TaskKind::PixelReacher => Self::pixel_reacher(90, 160),
            TaskKind::ArenaRover => Self::arena_rover(120, 160),
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn action_dim(&self) -> usize {
        self.action_bounds.dim()
    }

    pub fn layout(&self) -> ObsLayout {
        ObsLayout { frame_h: self.frame_h, frame_w: self.frame_w, proprio_dim: self.proprio_dim, action_dim: self.action_dim() }
    }

    pub fn episode_duration(&self) -> Duration {
        self.cycle_time * self.max_episode_steps
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TaskState {
    Arm(ArmState),
    Rover(RoverState),
}

/// The three most recent frames, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStack {
    frames: [Arc<Frame>; FRAME_STACK],
}

impl FrameStack {
    /// A stack holding three copies of `first`.
    pub fn filled(first: Frame) -> Self {
        let f = Arc::new(first);
        FrameStack { frames: [f.clone(), f.clone(), f] }
    }

    pub fn push(&mut self, frame: Frame) {
        self.frames.rotate_left(1);
        self.frames[FRAME_STACK - 1] = Arc::new(frame);
    }

    pub fn frames(&self) -> &[Arc<Frame>; FRAME_STACK] {
        &self.frames
    }

    pub fn newest(&self) -> &Frame {
        &self.frames[FRAME_STACK - 1]
    }
}

/// Result of one action cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct Tick {
    pub obs: Observation,
    /// The command actually applied (the held one on a missed deadline).
    pub applied: Action,
    pub reward: f64,
    pub done: bool,
    pub missed_deadline: bool,
}

#[derive(Clone, Debug)]
pub struct Env {
    spec: TaskSpec,
    weights: RewardWeights,
    state: TaskState,
    frames: FrameStack,
    prev_action: Vec<f64>,
    step: u32,
    missed_in_episode: u64,
    nan_actions: u64,
}

impl Env {
    /// A fresh environment; call [`Env::reset`] before the first tick.
    pub fn new(spec: TaskSpec) -> Self {
        let weights = RewardWeights::triangular(spec.frame_h, spec.frame_w);
        let state = match spec.kind {
            TaskKind::PixelReacher => TaskState::Arm(ArmState::home([0.0, 0.0])),
            TaskKind::ArenaRover => TaskState::Rover(RoverState::new(ARENA_W / 2.0, ARENA_H / 2.0, 0.0)),
        };
        let frames = FrameStack::filled(Frame::blank(spec.frame_h, spec.frame_w));
        let a = spec.action_dim();
        Env { spec, weights, state, frames, prev_action: vec![0.0; a], step: 0, missed_in_episode: 0, nan_actions: 0 }
    }

    pub fn with_weights(mut self, weights: RewardWeights) -> Self {
        assert_eq!((weights.height(), weights.width()), (self.spec.frame_h, self.spec.frame_w));
        self.weights = weights;
        self
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn state(&self) -> &TaskState {
        &self.state
    }

    pub fn weights(&self) -> &RewardWeights {
        &self.weights
    }

    pub fn frames(&self) -> &FrameStack {
        &self.frames
    }

    /// Ticks taken in the current episode.
    pub fn step_index(&self) -> u32 {
        self.step
    }

    pub fn missed_in_episode(&self) -> u64 {
        self.missed_in_episode
    }

    /// Actions rejected for containing NaN or infinity.
    pub fn nan_actions(&self) -> u64 {
        self.nan_actions
    }

    /// Starts a new episode: random target (arm) or random pose (rover).
    /// Takes no experience time.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Observation {
        self.state = match self.spec.kind {
            TaskKind::PixelReacher => TaskState::Arm(ArmState::random(rng)),
            TaskKind::ArenaRover => TaskState::Rover(RoverState::random(rng)),
        };
        self.frames = FrameStack::filled(self.render());
        self.prev_action = vec![0.0; self.spec.action_dim()];
        self.step = 0;
        self.missed_in_episode = 0;
        self.observation()
    }

    pub fn render(&self) -> Frame {
        match &self.state {
            TaskState::Arm(s) => s.render(self.spec.frame_h, self.spec.frame_w),
            TaskState::Rover(s) => s.render(self.spec.frame_h, self.spec.frame_w),
        }
    }

    pub fn observation(&self) -> Observation {
        let mut proprio = match &self.state {
            TaskState::Arm(s) => s.proprio(),
            TaskState::Rover(s) => s.proprio(),
        };
        proprio.iter_mut().for_each(|x| *x = quantize(*x));
        Observation { frames: self.frames.frames().clone(), proprio, prev_action: self.prev_action.clone() }
    }

    /// Advances one cycle. `None` (or a non-finite command) means the
    /// deadline was missed and the previous command is held.
    pub fn tick(&mut self, action: Option<&Action>) -> Tick {
        let dt = self.spec.cycle_time.as_secs_f64();
        let fresh = action.filter(|a| a.values.len() == self.spec.action_dim());
        let fresh = match fresh {
            Some(a) if !a.is_finite() => {
                self.nan_actions += 1;
                None
            }
            other => other,
        };
        let missed = fresh.is_none();
        let mut cmd = match fresh {
            Some(a) => a.values.clone(),
            None => self.prev_action.clone(),
        };
        self.spec.action_bounds.clamp(&mut cmd);
        cmd.iter_mut().for_each(|x| *x = quantize(*x));
        if missed {
            self.missed_in_episode += 1;
        }

        let frame_w = self.spec.frame_w;
        let frame_h = self.spec.frame_h;
        let (frame, reward, reached) = match &mut self.state {
            TaskState::Arm(s) => {
                s.integrate(&cmd, dt);
                let frame = s.render(frame_h, frame_w);
                let r = arm_reward(&frame, &s.joints, &self.weights);
                (frame, r, false)
            }
            TaskState::Rover(s) => {
                s.integrate(cmd[0], cmd[1], dt);
                let frame = s.render(frame_h, frame_w);
                let reached = target_fraction(&frame) > TERMINATION_FRACTION;
                (frame, rover_reward(), reached)
            }
        };
        self.frames.push(frame);
        let done = reached || self.step + 1 >= self.spec.max_episode_steps;
        self.step += 1;
        self.prev_action = cmd.clone();
        Tick { obs: self.observation(), applied: Action::new(cmd), reward: quantize(reward), done, missed_deadline: missed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedTree, Stream};

    #[test]
    fn episode_durations() {
        assert_eq!(TaskSpec::pixel_reacher(8, 8).episode_duration(), Duration::from_secs(4));
        let rover = TaskSpec::arena_rover(8, 8).episode_duration().as_secs_f64();
        assert!((rover - 30.0).abs() < 0.1);
        assert_eq!(TaskSpec::full_resolution(TaskKind::PixelReacher).layout().frame_w, 160);
    }

    #[test]
    fn zero_action_keeps_arm_still_and_rotates_frames() {
        let mut env = Env::new(TaskSpec::pixel_reacher(8, 8));
        env.reset(&mut SeedTree::new(1).stream(Stream::Env));
        let before = env.state().clone();
        let t = env.tick(Some(&Action::zeros(5)));
        assert_eq!(env.state(), &before);
        assert!(!t.missed_deadline);
        assert_eq!(t.obs.frames[0], t.obs.frames[2]);
    }

    #[test]
    fn frame_stack_tracks_last_three_ticks() {
        let mut env = Env::new(TaskSpec::pixel_reacher(8, 8));
        env.reset(&mut SeedTree::new(2).stream(Stream::Env));
        let mut rendered = Vec::new();
        for k in 0..6 {
            let t = env.tick(Some(&Action::new(vec![0.7, -0.7 * (k % 2) as f64, 0.1, 0.0, 0.0])));
            rendered.push(env.render());
            if k >= 2 {
                for j in 0..3 {
                    assert_eq!(*t.obs.frames[j], rendered[k - 2 + j]);
                }
            }
        }
    }

    #[test]
    fn missed_deadline_holds_previous_command() {
        let mut env = Env::new(TaskSpec::pixel_reacher(8, 8));
        env.reset(&mut SeedTree::new(3).stream(Stream::Env));
        let a = Action::new(vec![0.5, 0.25, 0.0, 0.0, 0.0]);
        env.tick(Some(&a));
        let t = env.tick(None);
        assert!(t.missed_deadline);
        assert_eq!(t.applied, a);
        let t = env.tick(Some(&Action::new(vec![f64::NAN; 5])));
        assert!(t.missed_deadline);
        assert_eq!(t.applied, a);
        assert_eq!(env.missed_in_episode(), 2);
        assert_eq!(env.nan_actions(), 1);
    }

    #[test]
    fn world_advances_without_actions() {
        let mut env = Env::new(TaskSpec::arena_rover(8, 8));
        env.reset(&mut SeedTree::new(4).stream(Stream::Env));
        env.tick(Some(&Action::new(vec![100.0, 100.0])));
        let before = env.state().clone();
        env.tick(None);
        assert_ne!(env.state(), &before);
        assert_eq!(env.step_index(), 2);
    }

    #[test]
    fn arm_episode_ends_at_cap() {
        let mut env = Env::new(TaskSpec::pixel_reacher(8, 8));
        env.reset(&mut SeedTree::new(5).stream(Stream::Env));
        for k in 0..100 {
            let t = env.tick(Some(&Action::zeros(5)));
            assert_eq!(t.done, k == 99);
        }
    }

    #[test]
    fn scripted_episode_replays_identically() {
        let run = || {
            let mut rng = SeedTree::new(6).stream(Stream::Env);
            let mut env = Env::new(TaskSpec::arena_rover(8, 8));
            let mut log = vec![env.reset(&mut rng)];
            for k in 0..200 {
                let a = Action::new(vec![150.0 * ((k / 10) % 3) as f64 / 2.0, 120.0]);
                let t = env.tick(Some(&a));
                log.push(t.obs);
                if t.done {
                    log.push(env.reset(&mut rng));
                }
            }
            log
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn observations_are_wire_exact() {
        let mut env = Env::new(TaskSpec::pixel_reacher(8, 8));
        let mut rng = SeedTree::new(7).stream(Stream::Env);
        env.reset(&mut rng);
        for _ in 0..20 {
            let a = Action::new((0..5).map(|_| rng.random_range(-0.7..0.7)).collect());
            let t = env.tick(Some(&a));
            assert!(t.obs.proprio.iter().chain(&t.obs.prev_action).all(|&x| quantize(x) == x));
            assert_eq!(quantize(t.reward), t.reward);
            assert!(t.obs.frames.iter().all(|f| f.in_unit_range()));
        }
    }
}
