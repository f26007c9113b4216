use std::collections::HashMap;
use std::time::Duration;

use relodkit::envs::TaskSpec;
use relodkit::orchestrator::*;
use relodkit::transport::MessageKind;
use relodkit::{Error, Timestamp};

/// Small networks keep these runs fast; timing behaviour does not depend on size.
fn cfg(text: &str) -> RunConfig {
    RunConfig::parse_str(&format!("net.hidden = 8\nlog.events = true\n{text}")).unwrap()
}

fn ticks(r: &RunReport) -> Vec<(Timestamp, Option<u64>, Vec<f64>)> {
    r.events
        .iter()
        .filter_map(|e| match e {
            LogEvent::Tick { at, version, action, .. } => Some((*at, *version, action.clone())),
            _ => None,
        })
        .collect()
}

#[test]
fn live_processes_follow_the_table() {
    for mode in Mode::ALL {
        let c = RunConfig { mode, ..cfg("") };
        let sim = Simulation::new(c).unwrap();
        for (p, h) in sim.topology().live_processes() {
            assert_eq!(table_placement(p, mode), Placement::On(h));
        }
    }
}

#[test]
fn remote_only_with_60ms_round_trip_misses_every_deadline() {
    let r = run(&cfg("mode = remote_only\nlink.preset = ideal\nlink.base_ms = 30\ntotal_steps = 300")).unwrap();
    assert_eq!(r.stats.steps, 300);
    assert_eq!(r.stats.missed_deadlines, 300);
    assert!(r.records.iter().all(|m| m.missed_deadlines == m.episode_length_steps));
    assert!(ticks(&r).iter().all(|(_, v, _)| v.is_none()));
}

#[test]
fn remote_only_on_a_fast_link_meets_deadlines() {
    let r = run(&cfg("mode = remote_only\nlink.preset = wired\ntotal_steps = 300")).unwrap();
    // Only the very first tick can be late: its action races the handshake-free start.
    assert_eq!(r.stats.missed_deadlines, 0);
    assert!(r.stats.inference_path_messages > 600);
}

#[test]
fn remote_local_latency_never_reaches_the_inference_path() {
    for base in [0, 20, 50, 100, 200] {
        let r = run(&cfg(&format!("mode = remote_local\nlink.base_ms = {base}\ntotal_steps = 400\nk = 10"))).unwrap();
        assert_eq!(r.stats.missed_deadlines, 0, "base {base}");
        assert_eq!(r.stats.inference_path_messages, 0);
        assert!(r.stats.snapshots_applied > 0, "base {base}");
    }
}

#[test]
fn remote_local_on_an_ideal_link_acts_like_local_only_until_the_first_snapshot() {
    let local = run(&cfg("mode = local_only\nlink.preset = ideal\ntotal_steps = 300")).unwrap();
    let remote = run(&cfg("mode = remote_local\nlink.preset = ideal\ntotal_steps = 300")).unwrap();
    let (a, b) = (ticks(&local), ticks(&remote));
    let first_update = a.iter().position(|(_, v, _)| *v != Some(0)).unwrap();
    assert!(first_update >= 64, "{first_update}");
    for i in 0..first_update {
        assert_eq!(a[i].2, b[i].2, "step {i}");
    }
}

#[test]
fn hundred_thousand_steps_take_exactly_4000_seconds() {
    let r = run(&cfg("mode = local_only\ntotal_steps = 100000\nsac.throttle = every:1000000\nlog.events = false")).unwrap();
    assert_eq!(r.records.len(), 1000);
    let t: f64 = r.records.iter().map(|m| m.real_experience_time_s).sum();
    assert_eq!(t, 4000.0);
    assert!(r.records.iter().all(|m| m.real_experience_time_s == m.episode_length_steps as f64 * 0.04));
    assert_eq!(r.stats.end_ns - r.stats.start_ns, 100_000 * 40_000_000);
}

#[test]
fn handshake_precedes_the_first_tick() {
    let r = run(&cfg("mode = remote_local\nlink.base_ms = 25\ntotal_steps = 10")).unwrap();
    let hello_back = r
        .events
        .iter()
        .find_map(|e| match e {
            LogEvent::Deliver { at, dir: Dir::Downlink, kind: MessageKind::Hello, .. } => Some(*at),
            _ => None,
        })
        .unwrap();
    let first = ticks(&r)[0].0;
    assert!(hello_back.0 >= 50_000_000);
    assert_eq!(first.0, hello_back.0 + 40_000_000);
}

#[test]
fn shape_mismatch_aborts_startup() {
    let c = cfg("mode = remote_local\ntotal_steps = 10");
    let err = Simulation::with_remote_spec(c.clone(), TaskSpec::pixel_reacher(8, 10)).unwrap().run().unwrap_err();
    assert!(matches!(err, Error::Startup(_)));
    let err = Simulation::with_remote_spec(c, TaskSpec::arena_rover(8, 8)).unwrap().run().unwrap_err();
    assert!(matches!(err, Error::Startup(_)));
}

#[test]
fn every_action_comes_from_exactly_one_snapshot() {
    let r = run(&cfg("mode = remote_local\nlink.preset = wifi\ntotal_steps = 10000\nk = 20")).unwrap();
    let mut current = 0;
    let mut by_obs: HashMap<u64, u64> = HashMap::new();
    let mut applied = Vec::new();
    for e in &r.events {
        match e {
            LogEvent::SnapshotApplied { version, .. } => {
                assert!(*version > current);
                current = *version;
                applied.push(*version);
            }
            LogEvent::Inference { obs_seq, version, .. } => {
                assert_eq!(*version, current, "inference must use the installed snapshot");
                by_obs.insert(*obs_seq, *version);
            }
            _ => {}
        }
    }
    assert!(applied.len() > 10);
    let versions: Vec<u64> = ticks(&r).iter().filter_map(|t| t.1).collect();
    assert_eq!(versions.len(), 10_000);
    assert!(versions.windows(2).all(|w| w[0] <= w[1]));
    assert!(versions.iter().all(|v| *v == 0 || applied.contains(v)));
}

#[test]
fn snapshot_staleness_is_bounded_on_a_stall_free_link() {
    let k = 25u64;
    let base_ms = 15u64;
    let r = run(&cfg(&format!("mode = remote_local\nlink.base_ms = {base_ms}\nk = {k}\ntotal_steps = 5000"))).unwrap();
    let cycle = 40_000_000u64;
    let rtt = 2 * base_ms * 1_000_000 + 350_000;
    let period = 10_000_000u64;
    // One extra cycle: snapshots land between ticks and wait for the next one.
    let bound = (k * cycle + rtt + cycle).div_ceil(period) + 1;
    let mut latest = 0;
    for e in &r.events {
        match e {
            LogEvent::UpdateDone { version, .. } => latest = *version,
            LogEvent::Tick { version: Some(v), .. } => assert!(latest - v <= bound, "lag {} > {bound}", latest - v),
            _ => {}
        }
    }
    assert!(r.stats.staleness_max <= bound);
    assert!(r.stats.staleness_max > 0);
}

#[test]
fn ingestion_never_waits_on_an_update() {
    let r = run(&cfg("mode = local_only\ncompute.preset = jetson_emulated\nsac.throttle = back_to_back\ntotal_steps = 2000")).unwrap();
    assert_eq!(r.stats.max_insert_wait_ns, 0);
    // Inserts do land while 500 ms updates are in flight.
    let mut in_flight = false;
    let mut overlapped = 0;
    for e in &r.events {
        match e {
            LogEvent::UpdateStart { .. } => in_flight = true,
            LogEvent::UpdateDone { .. } => in_flight = false,
            LogEvent::Insert { at, queued_at, .. } => {
                assert_eq!(at, queued_at);
                overlapped += in_flight as u64;
            }
            _ => {}
        }
    }
    assert!(overlapped > 1000);
}

#[test]
fn throttled_updates_follow_ingested_steps() {
    let r = run(&cfg("mode = local_only\nsac.throttle = every:12\ntotal_steps = 1200")).unwrap();
    // ⌊N/12⌋ fall due; the last one is due on the final step, after the run stops.
    assert_eq!(r.stats.updates, 1200 / 12 - 1);
}

#[test]
fn one_episode_consumer_stall_loses_nothing() {
    for mode in ["local_only", "remote_local", "remote_only"] {
        let r = run(&cfg(&format!(
            "mode = {mode}\nlink.preset = ideal\ntotal_steps = 10000\nfault.consumer_stall_ms = 4000\nfault.consumer_stall_period_ms = 8000\nlog.events = false"
        )))
        .unwrap();
        let s = &r.stats;
        assert_eq!(r.records.len(), 100);
        assert_eq!(s.transitions_produced, 10_000, "{mode}");
        assert_eq!(s.transitions_ingested, s.transitions_produced, "{mode}");
        let q = if mode == "local_only" { s.local_queue } else { s.remote_queue };
        assert_eq!(q.max_occupancy, 100, "{mode}: the stall fills the queue exactly");
        assert_eq!(q.blocked_pushes, 0, "{mode}");
        assert!(s.max_insert_wait_ns >= 3_900_000_000, "{mode}");
    }
}

#[test]
fn virtual_runs_are_reproducible() {
    for mode in ["local_only", "remote_only", "remote_local"] {
        let text = format!("mode = {mode}\nlink.preset = wifi\ntotal_steps = 1500");
        let a = run(&cfg(&text)).unwrap();
        let b = run(&cfg(&text)).unwrap();
        assert_eq!(a.event_log(), b.event_log(), "{mode}");
        assert_eq!(a.records, b.records);
        assert_eq!(a.stats, b.stats);
        let c = run(&cfg(&format!("{text}\nseed = 9"))).unwrap();
        assert_ne!(a.event_log(), c.event_log());
    }
}

#[test]
fn ppo_runs_in_every_mode_and_applies_snapshots_at_episode_starts() {
    for mode in Mode::ALL {
        let r = run(&cfg(&format!("mode = {mode}\nalgo = ppo\nppo.horizon = 256\nppo.epochs = 2\ntotal_steps = 1500\nk = 10"))).unwrap();
        assert!(r.aborted.is_none());
        assert!(r.stats.updates >= 4, "{mode}: {}", r.stats.updates);
        // Within an episode every fresh action comes from one version.
        let mut by_episode: HashMap<u64, Vec<u64>> = HashMap::new();
        for e in &r.events {
            if let LogEvent::Tick { episode, version: Some(v), .. } = e {
                by_episode.entry(*episode).or_default().push(*v);
            }
        }
        for (ep, vs) in by_episode {
            assert!(vs.iter().all(|v| *v == vs[0]), "{mode} episode {ep}: {vs:?}");
        }
    }
}

#[test]
fn ppo_pause_mode_stops_the_clock_during_updates() {
    for mode in Mode::ALL {
        let r = run(&cfg(&format!(
            "mode = {mode}\nalgo = ppo\nppo.horizon = 200\nppo.epochs = 1\nppo.pause_during_update = true\ntotal_steps = 1000\nlink.preset = wired"
        )))
        .unwrap();
        assert_eq!(r.stats.steps, 1000, "{mode}");
        assert_eq!(r.stats.transitions_discarded, 0, "{mode}");
        // The fifth horizon completes on the final step.
        assert!(r.stats.updates >= 4, "{mode}");
        let t = ticks(&r);
        let gaps = t.windows(2).filter(|w| w[1].0 .0 - w[0].0 .0 > 40_000_000).count();
        assert!(gaps >= 4, "{mode}: {gaps}");
    }
}

#[test]
fn lossy_link_drops_are_accounted() {
    let r = run(&cfg("mode = remote_local\nlink.drop_rate = 0.2\ntotal_steps = 2000")).unwrap();
    let s = &r.stats;
    assert!(s.messages_dropped > 0);
    assert!(s.transitions_lost > 0);
    assert_eq!(s.transitions_ingested + s.transitions_lost, s.transitions_produced);
}

#[test]
fn rover_episodes_end_on_the_patch_or_the_cap() {
    let r = run(&cfg("mode = local_only\ntask = arena_rover\ntotal_steps = 3000")).unwrap();
    for m in &r.records {
        assert!(m.episode_length_steps <= 666);
        assert_eq!(m.episodic_return, -(m.episode_length_steps as f64));
        assert!((m.real_experience_time_s - m.episode_length_steps as f64 * 0.045).abs() < 1e-12);
    }
    let _ = Duration::ZERO;
}
