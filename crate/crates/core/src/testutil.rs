//! Fixtures shared by unit tests.

use std::sync::Arc;

use rand::Rng;

use crate::clock::Timestamp;
use crate::types::{Action, Frame, ObsLayout, Observation, Transition};

pub fn tiny_layout() -> ObsLayout {
    ObsLayout { frame_h: 1, frame_w: 1, proprio_dim: 2, action_dim: 1 }
}

pub fn dummy_transition(id: u64) -> Transition {
    let l = tiny_layout();
    Transition {
        obs: Observation::zeros(&l),
        action: Action::zeros(l.action_dim),
        reward: -1.0,
        next_obs: Observation::zeros(&l),
        done: false,
        episode_id: id,
        step_index: 0,
        produced_at: Timestamp::ZERO,
        behavior_log_prob: 0.0,
        policy_version: 0,
    }
}

pub fn random_observation<R: Rng + ?Sized>(l: &ObsLayout, rng: &mut R) -> Observation {
    let mut frame = || {
        let px = (0..l.frame_len()).map(|_| rng.random_range(0.0..1.0)).collect();
        Arc::new(Frame::new(l.frame_h, l.frame_w, px).unwrap())
    };
    let frames = [frame(), frame(), frame()];
    Observation {
        frames,
        proprio: (0..l.proprio_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        prev_action: (0..l.action_dim).map(|_| rng.random_range(-0.5..0.5)).collect(),
    }
}

pub fn random_transition<R: Rng + ?Sized>(l: &ObsLayout, rng: &mut R) -> Transition {
    Transition {
        obs: random_observation(l, rng),
        action: Action::new((0..l.action_dim).map(|_| rng.random_range(-0.9..0.9)).collect()),
        reward: rng.random_range(-2.0..1.0),
        next_obs: random_observation(l, rng),
        done: rng.random_bool(0.3),
        episode_id: rng.random_range(0..10),
        step_index: rng.random_range(0..100),
        produced_at: Timestamp(rng.random()),
        behavior_log_prob: rng.random_range(-3.0..1.0),
        policy_version: rng.random_range(0..1000),
    }
}
