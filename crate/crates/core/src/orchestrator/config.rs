//! Flat `key = value` run configuration.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use crate::clock::ClockMode;
use crate::envs::{TaskKind, TaskSpec};
use crate::nn::Activation;
use crate::ppo::PpoConfig;
use crate::sac::{SacConfig, ThrottleMode};
use crate::transport::{Jitter, LinkModel};

use super::topology::{Algo, ComputeModel, Mode, ModeTopology};

/// A problem with one configuration line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based; 0 when the problem is not tied to a line.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}", self.line, self.message)
        } else {
            f.write_str(&self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError { line: i + 1, message: format!("expected `key = value`, got `{line}`") });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError { line: i + 1, message: "empty key".into() });
        }
        out.push(Entry { line: i + 1, key: k.to_string(), value: v.to_string() });
    }
    Ok(out)
}

/// Everything needed to build and run one system.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    pub mode: Mode,
    pub algo: Algo,
    pub task: TaskKind,
    pub seed: u64,
    pub total_steps: u64,
    pub link: LinkModel,
    pub local_compute: ComputeModel,
    pub remote_compute: ComputeModel,
    pub sac: SacConfig,
    /// Explicit `sac.throttle`; otherwise the learner host's preset decides.
    pub throttle: Option<ThrottleMode>,
    pub ppo: PpoConfig,
    /// Policy-sync interval in learner-interface iterations; defaults to the
    /// task's maximum episode length.
    pub k: Option<u64>,
    pub clock: ClockMode,
    pub frame_h: usize,
    pub frame_w: usize,
    pub port: u16,
    pub log_events: bool,
    /// Stall the learner-side transition consumer for this long...
    pub consumer_stall: Duration,
    /// ...once per this period (both zero: never).
    pub consumer_stall_period: Duration,
    /// Abort the run after this many environment steps.
    pub abort_after_steps: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run".into(),
            mode: Mode::RemoteLocal,
            algo: Algo::Sac,
            task: TaskKind::PixelReacher,
            seed: 0,
            total_steps: 10_000,
            link: LinkModel::wired(),
            local_compute: ComputeModel::workstation(),
            remote_compute: ComputeModel::workstation(),
            sac: task_sac_defaults(TaskKind::PixelReacher, SacConfig::default()),
            throttle: None,
            ppo: PpoConfig::default(),
            k: None,
            clock: ClockMode::Virtual,
            frame_h: 8,
            frame_w: 8,
            port: 9876,
            log_events: false,
            consumer_stall: Duration::ZERO,
            consumer_stall_period: Duration::ZERO,
            abort_after_steps: None,
        }
    }
}

/// Arm returns reach the thousands with no discounting; unscaled targets
/// make the critic diverge. With the scaled rewards the default temperature
/// outweighs the reward and the policy stays noisy, so the reacher also gets
/// a lower α and a slower learning rate.
fn task_sac_defaults(task: TaskKind, sac: SacConfig) -> SacConfig {
    let (reward_scale, alpha, lr) = match task {
        TaskKind::PixelReacher => (0.003, 0.02, 1e-4),
        TaskKind::ArenaRover => (1.0, 0.2, 3e-4),
    };
    SacConfig { reward_scale, alpha, actor_lr: lr, critic_lr: lr, alpha_lr: lr, ..sac }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("bad value `{v}` for `{key}`"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("bad boolean `{v}` for `{key}`")),
    }
}

fn millis(key: &str, v: &str) -> Result<Duration, String> {
    let x: f64 = parse(key, v)?;
    if !(x.is_finite() && x >= 0.0) {
        return Err(format!("`{key}` must be a non-negative number of milliseconds"));
    }
    Ok(Duration::from_nanos((x * 1e6).round() as u64))
}

fn positive(key: &str, v: &str) -> Result<usize, String> {
    match parse::<usize>(key, v)? {
        0 => Err(format!("`{key}` must be positive")),
        n => Ok(n),
    }
}

fn preset(key: &str, v: &str) -> Result<ComputeModel, String> {
    ComputeModel::preset(v).ok_or_else(|| format!("unknown {key} `{v}` (workstation | laptop | jetson_emulated)"))
}

/// Every key accepted by [`RunConfig::set`].
pub const KEYS: &[&str] = &[
    "run_id",
    "mode",
    "algo",
    "task",
    "seed",
    "total_steps",
    "k",
    "clock.mode",
    "link.preset",
    "link.base_ms",
    "link.jitter",
    "link.drop_rate",
    "link.reorder",
    "compute.preset",
    "compute.remote_preset",
    "sac.buffer_capacity",
    "sac.minibatch",
    "sac.throttle",
    "sac.alpha",
    "sac.tau",
    "sac.lr",
    "sac.warmup_steps",
    "sac.reward_scale",
    "sac.single_critic",
    "sac.learn_alpha",
    "ppo.horizon",
    "ppo.epochs",
    "ppo.minibatch",
    "ppo.clip",
    "ppo.lambda",
    "ppo.gamma",
    "ppo.lr",
    "ppo.value_lr",
    "ppo.reward_scale",
    "ppo.pause_during_update",
    "net.hidden",
    "net.activation",
    "net.port",
    "frame.h",
    "frame.w",
    "log.events",
    "fault.consumer_stall_ms",
    "fault.consumer_stall_period_ms",
    "fault.abort_after_steps",
];

impl RunConfig {
    /// Applies one key. `task` resets the SAC reward scale and presets
    /// replace whole groups, so callers should set them before the keys that
    /// refine them (see [`RunConfig::apply_entries`]).
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "run_id" => self.run_id = v.to_string(),
            "mode" => self.mode = v.parse()?,
            "algo" => self.algo = v.parse()?,
            "task" => {
                self.task = v.parse()?;
                self.sac = task_sac_defaults(self.task, self.sac.clone());
            }
            "seed" => self.seed = parse(key, v)?,
            "total_steps" => self.total_steps = parse(key, v)?,
            "k" => self.k = Some(positive(key, v)? as u64),
            "clock.mode" => self.clock = v.parse()?,
            "link.preset" => {
                self.link = LinkModel::preset(v).ok_or_else(|| format!("unknown link.preset `{v}` (ideal | wired | wifi)"))?
            }
            "link.base_ms" => self.link.base_delay = millis(key, v)?,
            "link.jitter" => self.link.jitter = v.parse::<Jitter>()?,
            "link.drop_rate" => {
                let p: f64 = parse(key, v)?;
                if !(0.0..=1.0).contains(&p) {
                    return Err("`link.drop_rate` must lie in [0, 1]".into());
                }
                self.link.drop_rate = p;
            }
            "link.reorder" => self.link.reorder = parse_bool(key, v)?,
            "compute.preset" => self.local_compute = preset(key, v)?,
            "compute.remote_preset" => self.remote_compute = preset(key, v)?,
            "sac.buffer_capacity" => self.sac.buffer_capacity = positive(key, v)?,
            "sac.minibatch" => self.sac.minibatch_size = positive(key, v)?,
            "sac.throttle" => self.throttle = Some(v.parse()?),
            "sac.alpha" => {
                let a: f64 = parse(key, v)?;
                if !(a > 0.0) {
                    return Err("`sac.alpha` must be positive".into());
                }
                self.sac.alpha = a;
            }
            "sac.tau" => self.sac.tau = parse(key, v)?,
            "sac.lr" => {
                let lr: f64 = parse(key, v)?;
                self.sac.actor_lr = lr;
                self.sac.critic_lr = lr;
                self.sac.alpha_lr = lr;
            }
            "sac.warmup_steps" => self.sac.warmup_steps = parse(key, v)?,
            "sac.reward_scale" => self.sac.reward_scale = parse(key, v)?,
            "sac.single_critic" => self.sac.single_critic = parse_bool(key, v)?,
            "sac.learn_alpha" => self.sac.learn_alpha = parse_bool(key, v)?,
            "ppo.horizon" => self.ppo.horizon = positive(key, v)?,
            "ppo.epochs" => self.ppo.epochs = positive(key, v)?,
            "ppo.minibatch" => self.ppo.minibatch_size = positive(key, v)?,
            "ppo.clip" => self.ppo.clip = parse(key, v)?,
            "ppo.lambda" => self.ppo.lambda = parse(key, v)?,
            "ppo.gamma" => self.ppo.gamma = parse(key, v)?,
            "ppo.lr" => self.ppo.actor_lr = parse(key, v)?,
            "ppo.value_lr" => self.ppo.value_lr = parse(key, v)?,
            "ppo.reward_scale" => self.ppo.reward_scale = parse(key, v)?,
            "ppo.pause_during_update" => self.ppo.pause_during_update = parse_bool(key, v)?,
            "net.hidden" => {
                let sizes = v
                    .split(',')
                    .map(|s| positive(key, s.trim()))
                    .collect::<Result<Vec<_>, _>>()?;
                self.sac.hidden = sizes.clone();
                self.ppo.hidden = sizes;
            }
            "net.activation" => {
                let act = match v {
                    "relu" => Activation::Relu,
                    "tanh" => Activation::Tanh,
                    _ => return Err(format!("unknown net.activation `{v}` (relu | tanh)")),
                };
                self.sac.hidden_activation = act;
                self.ppo.hidden_activation = act;
            }
            "net.port" => self.port = parse(key, v)?,
            "frame.h" => self.frame_h = positive(key, v)?,
            "frame.w" => self.frame_w = positive(key, v)?,
            "log.events" => self.log_events = parse_bool(key, v)?,
            "fault.consumer_stall_ms" => self.consumer_stall = millis(key, v)?,
            "fault.consumer_stall_period_ms" => self.consumer_stall_period = millis(key, v)?,
            "fault.abort_after_steps" => self.abort_after_steps = Some(parse(key, v)?),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies `task` and preset keys first, then the rest in file order.
    pub fn apply_entries(&mut self, entries: &[Entry]) -> Result<(), ConfigError> {
        let is_preset = |e: &&Entry| e.key == "task" || e.key.ends_with("preset");
        for e in entries.iter().filter(is_preset).chain(entries.iter().filter(|e| !is_preset(e))) {
            self.set(&e.key, &e.value).map_err(|message| ConfigError { line: e.line, message })?;
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.apply_entries(&parse_entries(text)?)?;
        cfg.validate().map_err(|message| ConfigError { line: 0, message })?;
        Ok(cfg)
    }

    /// Cross-key checks.
    pub fn validate(&self) -> Result<(), String> {
        if self.total_steps == 0 {
            return Err("`total_steps` must be positive".into());
        }
        if self.algo == Algo::Sac && self.ppo.pause_during_update {
            return Err("`ppo.pause_during_update` needs algo = ppo".into());
        }
        if self.algo == Algo::Ppo && self.throttle.is_some() {
            return Err("`sac.throttle` needs algo = sac".into());
        }
        if self.ppo.pause_during_update && self.link.drop_rate > 0.0 {
            return Err("`ppo.pause_during_update` needs a loss-free link (`link.drop_rate = 0`)".into());
        }
        if !(0.0..=1.0).contains(&self.sac.tau) {
            return Err("`sac.tau` must lie in [0, 1]".into());
        }
        if self.sac.minibatch_size > self.sac.buffer_capacity {
            return Err("`sac.minibatch` exceeds `sac.buffer_capacity`".into());
        }
        if self.consumer_stall > Duration::ZERO && self.consumer_stall_period <= self.consumer_stall {
            return Err("`fault.consumer_stall_period_ms` must exceed `fault.consumer_stall_ms`".into());
        }
        self.ppo.validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec::new(self.task, self.frame_h, self.frame_w)
    }

    pub fn topology(&self) -> ModeTopology {
        ModeTopology {
            mode: self.mode,
            algo: self.algo,
            k: self.k.unwrap_or(self.task_spec().max_episode_steps as u64),
            local: self.local_compute,
            remote: self.remote_compute,
        }
    }

    /// Explicit throttle, else the learner host's hardware limit.
    pub fn effective_throttle(&self) -> ThrottleMode {
        self.throttle.unwrap_or_else(|| {
            match self.topology().compute(self.topology().learner_host()).throttle_every {
                Some(n) => ThrottleMode::EveryNSteps(n),
                None => ThrottleMode::BackToBack,
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_keys() {
        let text = "\
# comment
mode = remote_only
algo = ppo
task = arena_rover
seed = 42
total_steps = 5000
link.base_ms = 20
link.jitter = uniform:0:80
compute.preset = laptop
sac.buffer_capacity = 1000
sac.minibatch = 32
ppo.horizon = 512
k = 7
clock.mode = virtual
";
        let c = RunConfig::parse_str(text).unwrap();
        assert_eq!((c.mode, c.algo, c.task, c.seed, c.total_steps), (Mode::RemoteOnly, Algo::Ppo, TaskKind::ArenaRover, 42, 5000));
        assert_eq!(c.link.base_delay, Duration::from_millis(20));
        assert_eq!(c.link.jitter, Jitter::Uniform { lo: Duration::ZERO, hi: Duration::from_millis(80) });
        assert_eq!(c.local_compute, ComputeModel::laptop());
        assert_eq!((c.sac.buffer_capacity, c.sac.minibatch_size, c.ppo.horizon), (1000, 32, 512));
        assert_eq!(c.topology().k, 7);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = RunConfig::parse_str("seed = 1\n\nbogus = 3\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("bogus"));
    }

    #[test]
    fn malformed_line_reports_line() {
        assert_eq!(RunConfig::parse_str("seed = 1\nno equals sign\n").unwrap_err().line, 2);
        assert_eq!(RunConfig::parse_str("seed = x\n").unwrap_err().line, 1);
    }

    #[test]
    fn presets_apply_before_refinements() {
        let c = RunConfig::parse_str("link.base_ms = 30\nlink.preset = wifi\n").unwrap();
        assert_eq!(c.link.base_delay, Duration::from_millis(30));
        assert!(matches!(c.link.jitter, Jitter::Uniform { .. }));
    }

    #[test]
    fn task_sets_sac_defaults_unless_overridden() {
        let reacher = RunConfig::default().sac;
        assert_eq!((reacher.reward_scale, reacher.alpha, reacher.critic_lr), (0.003, 0.02, 1e-4));
        let rover = RunConfig::parse_str("task = arena_rover\n").unwrap().sac;
        assert_eq!((rover.reward_scale, rover.alpha, rover.actor_lr), (1.0, 0.2, 3e-4));
        let c = RunConfig::parse_str("sac.reward_scale = 0.5\nsac.alpha = 0.1\ntask = arena_rover\n").unwrap();
        assert_eq!((c.sac.reward_scale, c.sac.alpha), (0.5, 0.1));
    }

    #[test]
    fn throttle_follows_learner_host() {
        let mut c = RunConfig::parse_str("mode = local_only\ncompute.preset = jetson_emulated\n").unwrap();
        assert_eq!(c.effective_throttle(), ThrottleMode::EveryNSteps(12));
        c.mode = Mode::RemoteLocal;
        assert_eq!(c.effective_throttle(), ThrottleMode::BackToBack);
        c.throttle = Some(ThrottleMode::EveryNSteps(3));
        assert_eq!(c.effective_throttle(), ThrottleMode::EveryNSteps(3));
    }

    #[test]
    fn k_defaults_to_episode_length() {
        assert_eq!(RunConfig::default().topology().k, 100);
        let c = RunConfig { task: TaskKind::ArenaRover, ..Default::default() };
        assert_eq!(c.topology().k, 666);
    }

    #[test]
    fn invalid_pairings_are_rejected() {
        assert!(RunConfig::parse_str("algo = sac\nppo.pause_during_update = true\n").is_err());
        assert!(RunConfig::parse_str("algo = ppo\nsac.throttle = every:12\n").is_err());
        assert!(RunConfig::parse_str("ppo.clip = 1.5\n").is_err());
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let sample = |k: &str| match k {
            "mode" => "local_only",
            "algo" => "sac",
            "task" => "pixel_reacher",
            "clock.mode" => "virtual",
            "link.preset" => "wired",
            "link.jitter" => "none",
            "link.reorder" | "sac.single_critic" | "sac.learn_alpha" | "ppo.pause_during_update" | "log.events" => "false",
            "compute.preset" | "compute.remote_preset" => "laptop",
            "sac.throttle" => "back_to_back",
            "net.hidden" => "8,8",
            "net.activation" => "tanh",
            "run_id" => "x",
            "link.drop_rate" | "ppo.clip" | "ppo.lambda" | "ppo.gamma" | "sac.tau" => "0.5",
            _ => "3",
        };
        for k in KEYS {
            let mut c = RunConfig::default();
            c.set(k, sample(k)).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }
}
