//! Multi-seed experiment runner: `run` fans a scenario out into one run per
//! (arm, seed), `plot` draws learning curves and `compare` tabulates final
//! returns.

pub mod plot;
pub mod scenario;
pub mod summary;

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use relodkit::metrics::{read_csv, write_csv, CsvError};
use relodkit::orchestrator::{self, ConfigError};
use thiserror::Error;

pub use scenario::{Arm, Override, Scenario};
pub use summary::{summarize, RunData, Summary};

/// Written next to the CSVs so `plot` and `compare` know what was run.
pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Config { path: String, source: ConfigError },
    #[error("run {run} aborted: {reason}")]
    Aborted { run: String, reason: String },
    #[error("{0}")]
    Run(#[from] relodkit::Error),
    #[error("{path}: {source}")]
    Csv { path: String, source: CsvError },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// What a scenario directory holds, as recorded by `run`.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub scenario: String,
    pub arms: Vec<String>,
    pub seeds: Vec<u64>,
    pub total_time_s: f64,
    pub smoothing: usize,
}

impl Manifest {
    fn to_text(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        format!(
            "scenario = {}\narms = {}\nseeds = {}\ntotal_time_s = {}\nsmoothing = {}\n",
            self.scenario,
            self.arms.join(", "),
            seeds.join(", "),
            self.total_time_s,
            self.smoothing
        )
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("{}: not a run directory ({e})", dir.display())))?;
        let bad = |line: usize, message: String| CliError::Config { path: path.display().to_string(), source: ConfigError { line, message } };
        let mut m = Manifest { scenario: String::new(), arms: Vec::new(), seeds: Vec::new(), total_time_s: 0.0, smoothing: 1 };
        for e in orchestrator::parse_entries(&text).map_err(|e| bad(e.line, e.message))? {
            let list = || e.value.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>();
            match e.key.as_str() {
                "scenario" => m.scenario = e.value.clone(),
                "arms" => m.arms = list(),
                "seeds" => m.seeds = list().iter().map(|s| s.parse().map_err(|_| bad(e.line, format!("bad seed `{s}`")))).collect::<Result<_, _>>()?,
                "total_time_s" => m.total_time_s = e.value.parse().map_err(|_| bad(e.line, "bad total_time_s".into()))?,
                "smoothing" => m.smoothing = e.value.parse().map_err(|_| bad(e.line, "bad smoothing".into()))?,
                k => return Err(bad(e.line, format!("unknown key `{k}`"))),
            }
        }
        Ok(m)
    }

    pub fn csv_path(&self, dir: &Path, arm: &str, seed: u64) -> PathBuf {
        dir.join(format!("{}_{arm}_{seed}.csv", self.scenario))
    }
}

/// Files written by one `run`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutcome {
    pub csvs: Vec<PathBuf>,
}

/// Loads a scenario file with `--set` overrides and the `RELODKIT_SEED`
/// fallback.
pub fn load_scenario(path: &Path, overrides: &[Override], env_seed: Option<u64>) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path)?;
    Scenario::parse(&text, overrides, env_seed).map_err(|source| CliError::Config { path: path.display().to_string(), source })
}

/// Runs every (arm, seed) pair in order, writing `{scenario}_{arm}_{seed}.csv`
/// plus a `.stats` sidecar and, if enabled, an `.events` log. Stops at the
/// first aborted run, keeping what it recorded.
pub fn cmd_run(scenario: &Scenario, out: &Path, mut progress: impl FnMut(&str)) -> Result<RunOutcome, CliError> {
    fs::create_dir_all(out)?;
    let manifest = Manifest {
        scenario: scenario.name.clone(),
        arms: scenario.arms.iter().map(|a| a.name.clone()).collect(),
        seeds: scenario.seeds.clone(),
        total_time_s: scenario.total_time_s(),
        smoothing: scenario.smoothing,
    };
    fs::write(out.join(MANIFEST), manifest.to_text())?;
    let mut outcome = RunOutcome::default();
    for arm in &scenario.arms {
        for &seed in &scenario.seeds {
            let cfg = scenario.run_config(arm, seed);
            let name = scenario.run_name(arm, seed);
            progress(&name);
            let report = orchestrator::run(&cfg)?;
            let csv = out.join(format!("{name}.csv"));
            write_csv(BufWriter::new(fs::File::create(&csv)?), &report.records)?;
            fs::write(out.join(format!("{name}.stats")), report.stats.to_text())?;
            if cfg.log_events {
                fs::write(out.join(format!("{name}.events")), report.event_log())?;
            }
            outcome.csvs.push(csv);
            if let Some(reason) = report.aborted {
                return Err(CliError::Aborted { run: name, reason });
            }
        }
    }
    Ok(outcome)
}

fn read_stats_staleness(path: &Path) -> Option<f64> {
    let text = fs::read_to_string(path).ok()?;
    text.lines().find_map(|l| l.strip_prefix("mean_staleness=")).and_then(|v| v.parse().ok())
}

/// Reads every run named in the manifest, in arm order. Missing files are
/// an error; unreadable schemas are rejected.
pub fn load_runs(dir: &Path) -> Result<(Manifest, Vec<(String, Vec<RunData>)>), CliError> {
    let m = Manifest::read(dir)?;
    let mut arms = Vec::new();
    for arm in &m.arms {
        let mut runs = Vec::new();
        for &seed in &m.seeds {
            let path = m.csv_path(dir, arm, seed);
            let file = fs::File::open(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let records = read_csv(BufReader::new(file)).map_err(|source| CliError::Csv { path: path.display().to_string(), source })?;
            let mean_staleness = read_stats_staleness(&path.with_extension("stats"));
            runs.push(RunData { seed, records, mean_staleness });
        }
        arms.push((arm.clone(), runs));
    }
    Ok((m, arms))
}

/// Writes `curves.svg` into `dir`; returns its path and any warnings.
pub fn cmd_plot(dir: &Path) -> Result<(PathBuf, Vec<String>), CliError> {
    let (m, arms) = load_runs(dir)?;
    let (svg, warnings) = plot::render(&m.scenario, &arms, m.total_time_s, m.smoothing);
    let path = dir.join("curves.svg");
    fs::write(&path, svg)?;
    Ok((path, warnings))
}

/// Summarises `dir` and writes `summary.csv` next to the runs.
pub fn cmd_compare(dir: &Path) -> Result<Summary, CliError> {
    let (_, arms) = load_runs(dir)?;
    let s = summarize(&arms);
    fs::write(dir.join("summary.csv"), s.to_csv())?;
    Ok(s)
}
