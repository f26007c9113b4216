use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::testutil::random_transition;
use crate::types::{quantize, ObsLayout};

fn quantized_transition(rng: &mut ChaCha8Rng) -> Transition {
    let l = ObsLayout { frame_h: 2, frame_w: 3, proprio_dim: 4, action_dim: 2 };
    let mut t = random_transition(&l, rng);
    let q = |o: &mut Observation| {
        for f in o.frames.iter_mut() {
            let px: Vec<f64> = f.pixels().iter().map(|&p| quantize(p)).collect();
            *f = Arc::new(Frame::new(f.height(), f.width(), px).unwrap());
        }
        o.proprio.iter_mut().for_each(|x| *x = quantize(*x));
        o.prev_action.iter_mut().for_each(|x| *x = quantize(*x));
    };
    q(&mut t.obs);
    q(&mut t.next_obs);
    t.action.values.iter_mut().for_each(|x| *x = quantize(*x));
    t.reward = quantize(t.reward);
    t.behavior_log_prob = quantize(t.behavior_log_prob);
    t
}

fn random_message(seed: u64) -> Message {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let payload = match rng.random_range(0..7) {
        0 => Payload::Hello(Hello {
            task: "pixel_reacher".into(),
            action_dim: rng.random_range(1..8),
            proprio_dim: rng.random(),
            frame_h: rng.random(),
            frame_w: rng.random(),
            cycle_ns: rng.random(),
            max_episode_steps: rng.random(),
            actor_shape: (0..rng.random_range(0..5)).map(|_| rng.random()).collect(),
        }),
        1 => {
            let t = quantized_transition(&mut rng);
            Payload::Obs(ObsReport {
                obs: t.obs,
                episode_id: rng.random(),
                step: rng.random(),
                reward: t.reward,
                done: rng.random(),
            })
        }
        2 => Payload::Act(ActCommand {
            obs_seq: rng.random(),
            action: (0..rng.random_range(0..6)).map(|_| quantize(rng.random_range(-1.0..1.0))).collect(),
            policy_version: rng.random(),
            log_prob: quantize(rng.random_range(-5.0..5.0)),
        }),
        3 => Payload::Transitions((0..rng.random_range(0..4)).map(|_| quantized_transition(&mut rng)).collect()),
        4 => {
            let w: Vec<f64> = (0..rng.random_range(0..50)).map(|_| rng.random_range(-2.0..2.0)).collect();
            Payload::Policy(PolicySnapshot::from_f64(rng.random(), &w))
        }
        5 => Payload::Heartbeat,
        _ => Payload::Bye,
    };
    Message::new(rng.random(), Timestamp(rng.random()), payload)
}

#[test]
fn heartbeat_frame_layout() {
    let bytes = encode(&Message::new(7, Timestamp(0), Payload::Heartbeat));
    assert_eq!(bytes.len(), 21);
    assert_eq!(&bytes[..4], &17u32.to_be_bytes());
    assert_eq!(bytes[4], 0x05);
    assert_eq!(&bytes[5..13], &7u64.to_be_bytes());
}

proptest! {
    #[test]
    fn round_trip(seed in any::<u64>()) {
        let m = random_message(seed);
        let bytes = encode(&m);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(encode(&back), bytes);
    }
}

#[test]
fn flipped_policy_byte_is_integrity_error() {
    let snap = PolicySnapshot::from_f64(4, &[0.25, -1.5, 3.0, 0.125]);
    let mut bytes = encode(&Message::new(1, Timestamp(9), Payload::Policy(snap)));
    bytes[4 + HEADER_LEN + 8 + 4 + 5] ^= 0x10;
    assert!(matches!(decode(&bytes), Err(WireError::Integrity(_))));
}

#[test]
fn every_single_bit_flip_of_a_policy_frame_is_detected() {
    let snap = PolicySnapshot::from_f64(11, &[0.5, -0.75, 2.0]);
    let bytes = encode(&Message::new(3, Timestamp(40), Payload::Policy(snap)));
    for bit in 0..bytes.len() * 8 {
        let mut b = bytes.clone();
        b[bit / 8] ^= 1 << (bit % 8);
        assert!(decode(&b).is_err(), "bit {bit} went undetected");
    }
}

#[test]
fn truncated_frame_is_framing_error() {
    let bytes = encode(&random_message(3));
    assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(WireError::Framing(_))));
    assert!(matches!(decode(&bytes[..2]), Err(WireError::Framing(_))));
}

#[test]
fn unknown_kind_is_protocol_error() {
    let mut bytes = encode(&Message::new(1, Timestamp(0), Payload::Bye));
    bytes[4] = 0x42;
    assert!(matches!(decode(&bytes), Err(WireError::Protocol(_))));
}

#[test]
fn stream_of_frames() {
    let msgs: Vec<Message> = (0..20).map(random_message).collect();
    let mut stream = Vec::new();
    for m in &msgs {
        write_frame(&mut stream, m).unwrap();
    }
    let mut cursor = io::Cursor::new(stream);
    let mut back = Vec::new();
    while let Some(m) = read_frame(&mut cursor).unwrap() {
        back.push(m);
    }
    assert_eq!(back, msgs);
}

#[test]
fn partial_buffer_waits_for_more() {
    let bytes = encode(&random_message(5));
    assert!(decode_frame(&bytes[..bytes.len() / 2]).unwrap().is_none());
    let (_, used) = decode_frame(&bytes).unwrap().unwrap();
    assert_eq!(used, bytes.len());
}
