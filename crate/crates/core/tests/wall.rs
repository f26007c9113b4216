use relodkit::envs::TaskSpec;
use relodkit::orchestrator::*;
use relodkit::transport::MessageKind;
use relodkit::Error;

fn cfg(text: &str) -> RunConfig {
    RunConfig::parse_str(&format!("clock.mode = wall\nnet.port = 0\nnet.hidden = 8\nsac.minibatch = 8\n{text}")).unwrap()
}

#[test]
fn every_mode_runs_to_completion_in_real_time() {
    for mode in Mode::ALL {
        let r = run(&cfg(&format!("mode = {mode}\nlink.preset = ideal\ntotal_steps = 40"))).unwrap();
        assert_eq!(r.aborted, None, "{mode}");
        assert_eq!(r.stats.steps, 40, "{mode}");
        // 40 ms cycles: at least 1.6 s of wall time.
        assert!(r.stats.end_ns - r.stats.start_ns >= 1_560_000_000, "{mode}");
        if mode != Mode::LocalOnly {
            assert_eq!(r.stats.sent(MessageKind::Hello), 2, "{mode}");
            assert_eq!(r.stats.sent(MessageKind::Bye), 1, "{mode}");
        }
    }
}

#[test]
fn remote_local_ships_transitions_not_observations() {
    let r = run(&cfg("mode = remote_local\nlink.preset = wired\ntotal_steps = 60\nk = 10")).unwrap();
    assert_eq!(r.aborted, None);
    assert_eq!(r.stats.inference_path_messages, 0);
    assert!(r.stats.sent(MessageKind::Transitions) > 0);
    assert_eq!(r.stats.transitions_ingested, 60);
    assert!(r.stats.updates > 0);
}

#[test]
fn remote_only_beyond_the_cycle_misses_every_deadline() {
    let r = run(&cfg("mode = remote_only\nlink.preset = ideal\nlink.base_ms = 45\ntotal_steps = 25")).unwrap();
    assert_eq!(r.stats.missed_deadlines, 25);
}

#[test]
fn ppo_pause_mode_resumes_over_the_socket() {
    for mode in [Mode::RemoteOnly, Mode::RemoteLocal, Mode::LocalOnly] {
        let text = format!(
            "mode = {mode}\nalgo = ppo\nlink.preset = ideal\nppo.horizon = 16\nppo.minibatch = 8\nppo.epochs = 1\nppo.pause_during_update = true\ntotal_steps = 40"
        );
        let r = run(&cfg(&text)).unwrap();
        assert_eq!(r.aborted, None, "{mode}");
        assert_eq!(r.stats.steps, 40, "{mode}");
        assert!(r.stats.updates >= 2, "{mode}: {}", r.stats.updates);
    }
}

#[test]
fn handshake_mismatch_is_a_startup_error() {
    // Different frame sizes change the observation layout; the wall runner
    // builds both ends from one config, so compare hellos directly.
    let a = hello_for(&TaskSpec::pixel_reacher(8, 8), &[10, 8, 4]);
    let b = hello_for(&TaskSpec::pixel_reacher(16, 16), &[10, 8, 4]);
    assert!(matches!(check_handshake(&a, &b), Err(Error::Startup(_))));
}
