use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use relodkit_cli::{cmd_compare, cmd_plot, cmd_run, load_scenario, Override, Scenario};

const SCENARIO: &str = "\
scenario = demo
seeds = 3
total_steps = 400
net.hidden = 8
sac.minibatch = 16
arms = lo, rl
arm.lo.mode = local_only
arm.rl.mode = remote_local
arm.rl.link.preset = wifi
";

fn bin(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_relodkit"));
    c.args(args).env_remove("RELODKIT_SEED");
    if let Some(s) = env_seed {
        c.env("RELODKIT_SEED", s);
    }
    c.output().unwrap()
}

fn write_scenario(dir: &Path, text: &str) -> String {
    let p = dir.join("s.cfg");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn csv_names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv") && n != "summary.csv")
        .collect();
    v.sort();
    v
}

#[test]
fn fan_out_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let s = Scenario::parse(SCENARIO, &[], None).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = cmd_run(&s, &a, |_| {}).unwrap();
    cmd_run(&s, &b, |_| {}).unwrap();
    assert_eq!(out.csvs.len(), 6);
    assert_eq!(
        csv_names(&a),
        ["demo_lo_0.csv", "demo_lo_1.csv", "demo_lo_2.csv", "demo_rl_0.csv", "demo_rl_1.csv", "demo_rl_2.csv"]
    );
    for n in csv_names(&a) {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n}");
        let stats = n.replace(".csv", ".stats");
        assert_eq!(fs::read(a.join(&stats)).unwrap(), fs::read(b.join(&stats)).unwrap(), "{stats}");
    }
    assert_eq!(cmd_compare(&a).unwrap().to_text(), cmd_compare(&b).unwrap().to_text());
    assert_eq!(fs::read(a.join("summary.csv")).unwrap(), fs::read(b.join("summary.csv")).unwrap());
}

#[test]
fn plot_and_compare_read_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let s = Scenario::parse(SCENARIO, &[], None).unwrap();
    cmd_run(&s, tmp.path(), |_| {}).unwrap();
    let (svg, warnings) = cmd_plot(tmp.path()).unwrap();
    assert!(warnings.is_empty());
    let svg = fs::read_to_string(svg).unwrap();
    assert_eq!(svg.matches(r#"class="seed""#).count(), 6);
    assert_eq!(svg.matches(r#"class="mean""#).count(), 2);
    // 400 steps of 40 ms.
    assert!(svg.contains(">16</text>"));
    let sum = cmd_compare(tmp.path()).unwrap();
    assert_eq!(sum.arms.iter().map(|a| a.arm.as_str()).collect::<Vec<_>>(), ["lo", "rl"]);
    assert!(sum.arms.iter().any(|a| a.ratio_to_best == 1.0));
    assert!(sum.arms.iter().all(|a| a.runs == 3 && a.staleness.is_some()));
}

#[test]
fn cli_seed_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_scenario(tmp.path(), "scenario = p\nseeds = 1\nseed = 7\ntotal_steps = 50\nnet.hidden = 8\n");
    let out = |name: &str| tmp.path().join(name).display().to_string();

    let o = bin(&["run", "-c", &cfg, "-o", &out("set"), "--set", "seed=42"], Some("3"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_names(&tmp.path().join("set")), ["p_remote_local_42.csv"]);

    let o = bin(&["run", "-c", &cfg, "-o", &out("file")], Some("3"));
    assert!(o.status.success());
    assert_eq!(csv_names(&tmp.path().join("file")), ["p_remote_local_7.csv"]);

    let bare = write_scenario(tmp.path(), "scenario = p\nseeds = 1\ntotal_steps = 50\nnet.hidden = 8\n");
    let o = bin(&["run", "-c", &bare, "-o", &out("env")], Some("3"));
    assert!(o.status.success());
    assert_eq!(csv_names(&tmp.path().join("env")), ["p_remote_local_3.csv"]);
}

#[test]
fn parse_errors_exit_2_with_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_scenario(tmp.path(), "scenario = x\ntotal_steps = 10\nlink.base_ms = soon\n");
    let o = bin(&["run", "-c", &cfg, "-o", &tmp.path().join("o").display().to_string()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
    assert_eq!(bin(&["run", "-c", &cfg, "--set", "novalue"], None).status.code(), Some(2));
}

#[test]
fn aborted_runs_exit_1_and_keep_their_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_scenario(tmp.path(), "scenario = bad\nseeds = 2\nmode = local_only\ntotal_steps = 3000\nnet.hidden = 8\nfault.abort_after_steps = 1500\n");
    let out = tmp.path().join("o");
    let o = bin(&["run", "-c", &cfg, "-o", &out.display().to_string()], None);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("aborted"));
    assert_eq!(csv_names(&out), ["bad_local_only_0.csv"]);
    let text = fs::read_to_string(out.join("bad_local_only_0.csv")).unwrap();
    assert!(text.starts_with(relodkit::metrics::CSV_HEADER));
    // 1500 steps of 100-step episodes were recorded before the fault.
    assert_eq!(text.lines().count(), 1 + 15);
}

#[test]
fn foreign_csvs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let s = Scenario::parse("scenario = f\nseeds = 1\ntotal_steps = 200\nnet.hidden = 8\n", &[], None).unwrap();
    cmd_run(&s, tmp.path(), |_| {}).unwrap();
    fs::write(tmp.path().join("f_remote_local_0.csv"), "when,what\n1,2\n").unwrap();
    let o = bin(&["compare", &tmp.path().display().to_string()], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(cmd_plot(tmp.path()).is_err());
}

#[test]
fn overrides_reach_every_arm() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_scenario(tmp.path(), SCENARIO);
    let s = load_scenario(Path::new(&cfg), &["total_steps=80".parse::<Override>().unwrap()], None).unwrap();
    assert!(s.arms.iter().all(|a| a.config.total_steps == 80));
}

#[test]
fn shipped_scenarios_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for e in fs::read_dir(dir).unwrap() {
        let s = load_scenario(&e.unwrap().path(), &[], None).unwrap();
        assert!(!s.arms.is_empty());
        n += 1;
    }
    assert!(n >= 3);
}
