use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::finite_diff::{central_difference, max_relative_error};
use crate::nn::Layer;
use crate::testutil::{dummy_transition, random_transition, tiny_layout};
use crate::types::{Action, Transition};

fn small_config() -> SacConfig {
    SacConfig { hidden: vec![4], hidden_activation: Activation::Tanh, minibatch_size: 8, ..Default::default() }
}

fn small_params(seed: u64) -> SacParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SacParams::new(&tiny_layout(), &ActionBounds::symmetric(1, 0.7), &small_config(), &mut rng)
}

fn zero_net(net: &mut DenseNet) {
    let n = net.param_count();
    net.set_params(&vec![0.0; n]).unwrap();
}

fn random_batch(n: usize, seed: u64) -> Minibatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts: Vec<Transition> = (0..n).map(|_| random_transition(&tiny_layout(), &mut rng)).collect();
    Minibatch::from_transitions(&ts, &tiny_layout()).unwrap()
}

/// Straight-line recomputation of the soft value, independent of the
/// policy-head and batching code.
fn soft_value_oracle(p: &SacParams, s: &[f64], eps: f64) -> f64 {
    let head = p.actor.forward(s).unwrap();
    let (mean, log_std) = (head[0], head[1].clamp(-20.0, 2.0));
    let u = mean + log_std.exp() * eps;
    let a = 0.7 * u.tanh();
    let gauss = -0.5 * eps * eps - log_std - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let log_pi = gauss - (1.0 - u.tanh().powi(2)).ln() - 0.7f64.ln();
    let mut input = s.to_vec();
    input.push(a);
    let q = p.target_critics.iter().map(|c| c.forward(&input).unwrap()[0]).fold(f64::INFINITY, f64::min);
    q - p.alpha * log_pi
}

#[test]
fn soft_value_with_zero_critics_and_no_entropy_is_zero() {
    let mut p = small_params(1);
    p.alpha = 0.0;
    p.target_critics.iter_mut().for_each(zero_net);
    let s = vec![0.1; p.obs_dim()];
    assert_eq!(soft_value(&p, &s, &[0.4]).unwrap(), 0.0);
}

#[test]
fn soft_value_isolates_entropy_term() {
    let mut p = small_params(2);
    p.alpha = 1.0;
    p.target_critics.iter_mut().for_each(zero_net);
    let s = vec![0.3; p.obs_dim()];
    let lp = crate::nn::gaussian_policy_sample(&p.actor, &s, &[0.4], &p.policy).unwrap().log_prob;
    assert_eq!(soft_value(&p, &s, &[0.4]).unwrap(), -lp);
}

#[test]
fn soft_value_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..20 {
        let mut p = small_params(seed);
        p.alpha = rng.random_range(0.0..1.0);
        let s: Vec<f64> = (0..p.obs_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps: f64 = rng.random_range(-2.0..2.0);
        let got = soft_value(&p, &s, &[eps]).unwrap();
        let want = soft_value_oracle(&p, &s, eps);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn critic_loss_terminal_arithmetic() {
    let mut p = small_params(4);
    p.critics.iter_mut().for_each(zero_net);
    let mut t = dummy_transition(0);
    t.done = true;
    t.reward = -1.0;
    let mb = Minibatch::from_transitions([&t], &tiny_layout()).unwrap();
    let cl = critic_loss(&p, &mb, &[0.0]).unwrap();
    assert_eq!(cl.loss, 0.5);
}

#[test]
fn critic_loss_vanishes_at_target() {
    let mut p = small_params(5);
    let mut mb = random_batch(6, 5);
    mb.dones.iter_mut().for_each(|d| *d = 1.0);
    mb.rewards.iter_mut().for_each(|r| *r = -0.75);
    for c in &mut p.critics {
        zero_net(c);
        let last = c.layers_mut().last_mut().unwrap();
        last.bias[0] = -0.75;
    }
    let cl = critic_loss(&p, &mb, &[0.1; 6]).unwrap();
    assert_eq!(cl.loss, 0.0);
    assert!(cl.grads.iter().flatten().all(|&g| g == 0.0));
}

#[test]
fn actor_loss_zero_with_zero_critics_and_no_entropy() {
    let mut p = small_params(6);
    p.alpha = 0.0;
    p.critics.iter_mut().for_each(zero_net);
    let mb = random_batch(5, 6);
    assert_eq!(actor_loss(&p, &mb, &[0.3; 5]).unwrap().loss, 0.0);
}

#[test]
fn actor_loss_is_affine_in_alpha() {
    let mut p = small_params(7);
    let mb = random_batch(5, 7);
    let noise = vec![0.2, -0.4, 1.0, 0.0, -1.3];
    p.alpha = 0.0;
    let l0 = actor_loss(&p, &mb, &noise).unwrap();
    p.alpha = 0.5;
    let l1 = actor_loss(&p, &mb, &noise).unwrap();
    p.alpha = 1.0;
    let l2 = actor_loss(&p, &mb, &noise).unwrap();
    let slope = (l2.loss - l0.loss) / 1.0;
    assert!((slope - l0.mean_log_prob).abs() < 1e-12);
    assert!((l1.loss - (l0.loss + 0.5 * slope)).abs() < 1e-12);
}

#[test]
fn critic_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let p = small_params(100 + seed);
        let mb = random_batch(4, seed);
        let noise = vec![0.5, -0.1, 0.9, -1.5];
        let cl = critic_loss(&p, &mb, &noise).unwrap();
        for c in 0..p.critics.len() {
            let numeric = central_difference(&p.critics[c].params(), 1e-5, |w| {
                let mut q = p.clone();
                q.critics[c].set_params(w).unwrap();
                critic_loss(&q, &mb, &noise).unwrap().loss
            });
            assert!(max_relative_error(&cl.grads[c], &numeric) <= 1e-5);
        }
    }
}

#[test]
fn actor_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let p = small_params(200 + seed);
        let mb = random_batch(4, seed);
        let noise = vec![0.5, -0.1, 0.9, -1.5];
        let al = actor_loss(&p, &mb, &noise).unwrap();
        let numeric = central_difference(&p.actor.params(), 1e-5, |w| {
            let mut q = p.clone();
            q.actor.set_params(w).unwrap();
            actor_loss(&q, &mb, &noise).unwrap().loss
        });
        assert!(max_relative_error(&al.grad, &numeric) <= 1e-5);
    }
}

#[test]
fn targets_affect_critic_loss_but_not_actor_loss() {
    let p = small_params(8);
    let mb = random_batch(4, 8);
    let noise = vec![0.1, 0.2, -0.3, 0.4];
    let mut q = p.clone();
    for t in &mut q.target_critics {
        for l in t.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b += 0.25);
        }
    }
    assert_ne!(critic_loss(&p, &mb, &noise).unwrap().loss, critic_loss(&q, &mb, &noise).unwrap().loss);
    let (a, b) = (actor_loss(&p, &mb, &noise).unwrap(), actor_loss(&q, &mb, &noise).unwrap());
    assert_eq!(a.loss, b.loss);
    assert_eq!(a.grad, b.grad);

    // Critic perturbation moves the actor loss; evaluating the actor loss
    // leaves critic gradients untouched.
    let mut r = p.clone();
    for c in &mut r.critics {
        c.layers_mut().last_mut().unwrap().bias[0] += 0.5;
    }
    assert_ne!(actor_loss(&p, &mb, &noise).unwrap().loss, actor_loss(&r, &mb, &noise).unwrap().loss);
    let before = critic_loss(&p, &mb, &noise).unwrap().grads;
    let _ = actor_loss(&p, &mb, &noise).unwrap();
    assert_eq!(before, critic_loss(&p, &mb, &noise).unwrap().grads);
}

#[test]
fn polyak_extremes_and_arithmetic() {
    let mut p = small_params(9);
    p.tau = 1.0;
    polyak_update(&mut p);
    assert_eq!(p.target_critics, p.critics);

    let mut p = small_params(10);
    p.critics[0].layers_mut()[0].weights[0] = 3.0;
    let before = p.target_critics.clone();
    p.tau = 0.0;
    polyak_update(&mut p);
    assert_eq!(p.target_critics, before);

    let mut single = Layer::zeros(1, 1, Activation::Identity);
    single.weights[0] = 0.0;
    let mut online = single.clone();
    online.weights[0] = 1.0;
    let mut q = small_params(11);
    q.target_critics = vec![DenseNet::from_layers(vec![single]).unwrap()];
    q.critics = vec![DenseNet::from_layers(vec![online]).unwrap()];
    q.tau = 0.005;
    polyak_update(&mut q);
    assert_eq!(q.target_critics[0].layers()[0].weights[0], 0.005);
}

fn filled_buffer(n: usize, seed: u64) -> ReplayBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ReplayBuffer::new(1000);
    for _ in 0..n {
        b.insert(random_transition(&tiny_layout(), &mut rng));
    }
    b
}

#[test]
fn throttled_update_count() {
    let p = small_params(12);
    let mut learner = SacLearner::new(p, small_config(), tiny_layout());
    let buffer = filled_buffer(64, 12);
    let mut throttle = UpdateThrottle::every_n_steps(12);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 150;
    let mut snapshots = 0;
    for step in 1..=n {
        if sac_update_cycle(&mut learner, &buffer, &mut throttle, step, &mut rng).unwrap().is_some() {
            snapshots += 1;
        }
    }
    assert_eq!(snapshots, n / 12);
    assert_eq!(learner.updates(), n / 12);
}

#[test]
fn empty_buffer_means_no_updates() {
    let mut learner = SacLearner::new(small_params(13), small_config(), tiny_layout());
    let buffer = ReplayBuffer::new(100);
    let mut throttle = UpdateThrottle::back_to_back();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for step in 1..50 {
        assert!(sac_update_cycle(&mut learner, &buffer, &mut throttle, step, &mut rng).unwrap().is_none());
    }
    assert_eq!(learner.updates(), 0);
    assert_eq!(learner.version(), 0);
}

#[test]
fn snapshot_versions_increase_by_one() {
    let mut learner = SacLearner::new(small_params(14), small_config(), tiny_layout());
    let buffer = filled_buffer(32, 14);
    let mut throttle = UpdateThrottle::back_to_back();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let versions: Vec<u64> = (1..=5)
        .map(|s| sac_update_cycle(&mut learner, &buffer, &mut throttle, s, &mut rng).unwrap().unwrap().version)
        .collect();
    assert_eq!(versions, vec![1, 2, 3, 4, 5]);
    let snap = learner.snapshot();
    assert!(snap.verify());
    // Learner-side actor stays at wire precision.
    assert_eq!(snap.weights_f64(), learner.params.actor.params());
}

/// Two-state chain A → B → end with reward −1 per step: under γ = 1 and no
/// entropy bonus the critic's fixed point is the negated number of
/// remaining steps.
#[test]
fn critic_converges_on_two_state_chain() {
    let l = tiny_layout();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut cfg = small_config();
    cfg.hidden = vec![8];
    cfg.alpha = 0.0;
    let mut p = SacParams::new(&l, &ActionBounds::symmetric(1, 0.7), &cfg, &mut rng);
    p.tau = 0.05;
    let state = |tag: f64| {
        let mut o = crate::types::Observation::zeros(&l);
        o.proprio[0] = tag;
        o
    };
    let (a, b, end) = (state(1.0), state(-1.0), state(0.0));
    let mk = |s: &crate::types::Observation, n: &crate::types::Observation, done: bool| Transition {
        obs: s.clone(),
        next_obs: n.clone(),
        action: Action::new(vec![0.0]),
        reward: -1.0,
        done,
        ..dummy_transition(0)
    };
    let ts = [mk(&a, &b, false), mk(&b, &end, true)];
    let mb = Minibatch::from_transitions(&ts, &l).unwrap();
    let mut opts: Vec<OptimizerState> =
        p.critics.iter().map(|c| OptimizerState::new(c.param_count(), AdamConfig::with_lr(1e-2))).collect();
    for _ in 0..3000 {
        let noise = normal_noise(2, 1, &mut rng);
        let cl = critic_loss(&p, &mb, &noise).unwrap();
        for ((c, g), o) in p.critics.iter_mut().zip(&cl.grads).zip(&mut opts) {
            let mut w = c.params();
            adam_step(&mut w, g, o).unwrap();
            c.set_params(&w).unwrap();
        }
        polyak_update(&mut p);
    }
    for c in &p.critics {
        let qa = c.forward(&[mb.obs_row(0), &[0.0][..]].concat()).unwrap()[0];
        let qb = c.forward(&[mb.obs_row(1), &[0.0][..]].concat()).unwrap()[0];
        assert!((qa + 2.0).abs() < 0.05, "Q(A) = {qa}");
        assert!((qb + 1.0).abs() < 0.05, "Q(B) = {qb}");
    }
}
