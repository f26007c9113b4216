//! Scenario files: one shared run configuration, named arms that override
//! parts of it, and a seed count.

use relodkit::orchestrator::{parse_entries, ConfigError, Entry, RunConfig};

pub const DEFAULT_SEEDS: u64 = 5;
pub const DEFAULT_SMOOTHING: usize = 20;

/// One configuration under comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    pub name: String,
    /// Complete except for `seed` and `run_id`, which vary per run.
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    /// Trailing window, in episodes, for plotted curves.
    pub smoothing: usize,
}

/// A `--set key=value` override.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Override {
    pub key: String,
    pub value: String,
}

impl std::str::FromStr for Override {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(format!("empty key in `{s}`"));
        }
        Ok(Override { key: k.to_string(), value: v.to_string() })
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError { line, message: message.into() }
}

impl Scenario {
    /// Precedence, lowest first: `env_seed`, the file, then `overrides`.
    /// Arm-specific keys (`arm.<name>.<key>`) apply on top of the shared ones.
    pub fn parse(text: &str, overrides: &[Override], env_seed: Option<u64>) -> Result<Self, ConfigError> {
        let mut entries = parse_entries(text)?;
        // Overrides carry line 0: they have no place in the file.
        entries.extend(overrides.iter().map(|o| Entry { line: 0, key: o.key.clone(), value: o.value.clone() }));

        let mut name = "scenario".to_string();
        let mut seeds = DEFAULT_SEEDS;
        let mut smoothing = DEFAULT_SMOOTHING;
        let mut arm_names: Option<(usize, Vec<String>)> = None;
        let mut shared = Vec::new();
        let mut per_arm: Vec<(String, Entry)> = Vec::new();
        for e in entries {
            match e.key.as_str() {
                "scenario" => {
                    if !valid_name(&e.value) {
                        return Err(err(e.line, format!("bad scenario name `{}`", e.value)));
                    }
                    name = e.value;
                }
                "seeds" => {
                    seeds = e.value.parse().map_err(|_| err(e.line, format!("bad seed count `{}`", e.value)))?;
                    if seeds == 0 {
                        return Err(err(e.line, "`seeds` must be at least 1"));
                    }
                }
                "smoothing" => {
                    smoothing = e.value.parse().map_err(|_| err(e.line, format!("bad smoothing window `{}`", e.value)))?;
                    if smoothing == 0 {
                        return Err(err(e.line, "`smoothing` must be at least 1"));
                    }
                }
                "arms" => {
                    let names: Vec<String> = e.value.split(',').map(|s| s.trim().to_string()).collect();
                    if let Some(bad) = names.iter().find(|n| !valid_name(n)) {
                        return Err(err(e.line, format!("bad arm name `{bad}`")));
                    }
                    if (1..names.len()).any(|i| names[..i].contains(&names[i])) {
                        return Err(err(e.line, "duplicate arm name"));
                    }
                    arm_names = Some((e.line, names));
                }
                k if k.starts_with("arm.") => {
                    let Some((arm, key)) = k["arm.".len()..].split_once('.') else {
                        return Err(err(e.line, format!("expected `arm.<name>.<key>`, got `{k}`")));
                    };
                    if matches!(key, "task" | "total_steps" | "seed") {
                        return Err(err(e.line, format!("`{key}` is shared by all arms")));
                    }
                    per_arm.push((arm.to_string(), Entry { line: e.line, key: key.to_string(), value: e.value.clone() }));
                }
                _ => shared.push(e),
            }
        }

        let mut base = RunConfig::default();
        if let Some(s) = env_seed {
            base.seed = s;
        }
        base.apply_entries(&shared)?;

        let names = match arm_names {
            Some((_, names)) => names,
            None => vec![base.mode.name().to_string()],
        };
        if let Some((arm, e)) = per_arm.iter().find(|(a, _)| !names.contains(a)) {
            return Err(err(e.line, format!("arm `{arm}` is not listed in `arms`")));
        }
        let mut arms = Vec::new();
        for n in names {
            let mut config = base.clone();
            let own: Vec<Entry> = per_arm.iter().filter(|(a, _)| *a == n).map(|(_, e)| e.clone()).collect();
            config.apply_entries(&own)?;
            config.validate().map_err(|m| err(0, format!("arm `{n}`: {m}")))?;
            arms.push(Arm { name: n, config });
        }
        Ok(Scenario { name, total_steps: base.total_steps, seeds: (0..seeds).map(|i| base.seed + i).collect(), smoothing, arms })
    }

    /// File stem shared by a run's CSV, stats and event log.
    pub fn run_name(&self, arm: &Arm, seed: u64) -> String {
        format!("{}_{}_{}", self.name, arm.name, seed)
    }

    /// The configuration of one (arm, seed) run.
    pub fn run_config(&self, arm: &Arm, seed: u64) -> RunConfig {
        RunConfig { seed, run_id: self.run_name(arm, seed), ..arm.config.clone() }
    }

    /// Experience time of a full run; every arm shares the task and step budget.
    pub fn total_time_s(&self) -> f64 {
        let cycle = self.arms[0].config.task_spec().cycle_time;
        (cycle * self.total_steps as u32).as_secs_f64()
    }
}
