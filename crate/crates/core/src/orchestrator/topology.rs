use std::fmt;
use std::str::FromStr;
use std::time::Duration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    LocalOnly,
    RemoteOnly,
    RemoteLocal,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::RemoteLocal, Mode::RemoteOnly, Mode::LocalOnly];

    pub fn name(self) -> &'static str {
        match self {
            Mode::LocalOnly => "local_only",
            Mode::RemoteOnly => "remote_only",
            Mode::RemoteLocal => "remote_local",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "local_only" => Ok(Mode::LocalOnly),
            "remote_only" => Ok(Mode::RemoteOnly),
            "remote_local" => Ok(Mode::RemoteLocal),
            _ => Err(format!("unknown mode `{s}` (local_only | remote_only | remote_local)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algo {
    Sac,
    Ppo,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Sac => "sac",
            Algo::Ppo => "ppo",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sac" => Ok(Algo::Sac),
            "ppo" => Ok(Algo::Ppo),
            _ => Err(format!("unknown algorithm `{s}` (sac | ppo)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Host {
    Local,
    Remote,
}

impl Host {
    pub fn name(self) -> &'static str {
        match self {
            Host::Local => "local",
            Host::Remote => "remote",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Process {
    AgentInterface,
    ActionComputation,
    LocalSend,
    LocalReceive,
    LearnerInterface,
    ReplayBuffer,
    Update,
}

impl Process {
    pub const ALL: [Process; 7] = [
        Process::AgentInterface,
        Process::ActionComputation,
        Process::LocalSend,
        Process::LocalReceive,
        Process::LearnerInterface,
        Process::ReplayBuffer,
        Process::Update,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Process::AgentInterface => "agent_interface",
            Process::ActionComputation => "action_computation",
            Process::LocalSend => "local_send",
            Process::LocalReceive => "local_receive",
            Process::LearnerInterface => "learner_interface",
            Process::ReplayBuffer => "replay_buffer",
            Process::Update => "update",
        }
    }
}

/// Where a process lives in one mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Placement {
    On(Host),
    /// Runs inside another process rather than on its own.
    IncludedIn(Process),
    Absent,
}

/// The placement table: rows are processes, columns remote-local,
/// remote-only, local-only.
const TABLE: [(Process, [Placement; 3]); 7] = {
    use Host::*;
    use Placement::*;
    use Process::*;
    [
        (AgentInterface, [On(Local), On(Local), On(Local)]),
        (ActionComputation, [IncludedIn(AgentInterface), IncludedIn(LearnerInterface), IncludedIn(AgentInterface)]),
        (LocalSend, [On(Local), Absent, Absent]),
        (LocalReceive, [On(Local), Absent, Absent]),
        (LearnerInterface, [On(Remote), On(Remote), IncludedIn(AgentInterface)]),
        (ReplayBuffer, [On(Remote), On(Remote), On(Local)]),
        (Update, [On(Remote), On(Remote), On(Local)]),
    ]
};

/// Placement of one process under one mode.
pub fn table_placement(process: Process, mode: Mode) -> Placement {
    let col = match mode {
        Mode::RemoteLocal => 0,
        Mode::RemoteOnly => 1,
        Mode::LocalOnly => 2,
    };
    TABLE.iter().find(|(p, _)| *p == process).map(|(_, row)| row[col]).expect("every process has a row")
}

/// Per-host costs of one iteration of each compute-bound activity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComputeModel {
    pub inference_cost: Duration,
    /// One SAC update (or one PPO minibatch step).
    pub update_cost: Duration,
    /// Serialising and handing one message to the network.
    pub relay_cost: Duration,
    /// Updates allowed per environment step, if the hardware is throttled.
    pub throttle_every: Option<u64>,
}

impl ComputeModel {
    pub fn workstation() -> Self {
        ComputeModel {
            inference_cost: Duration::from_millis(2),
            update_cost: Duration::from_millis(10),
            relay_cost: Duration::from_micros(100),
            throttle_every: None,
        }
    }

    pub fn laptop() -> Self {
        ComputeModel {
            inference_cost: Duration::from_millis(8),
            update_cost: Duration::from_millis(40),
            relay_cost: Duration::from_micros(250),
            throttle_every: None,
        }
    }

    /// Half a second per update, at most one update per 12 steps.
    pub fn jetson_emulated() -> Self {
        ComputeModel {
            inference_cost: Duration::from_millis(10),
            update_cost: Duration::from_millis(500),
            relay_cost: Duration::from_millis(1),
            throttle_every: Some(12),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "workstation" => Some(Self::workstation()),
            "laptop" => Some(Self::laptop()),
            "jetson_emulated" => Some(Self::jetson_emulated()),
            _ => None,
        }
    }
}

/// Process placement for one mode, the policy-sync interval and the two
/// hosts' compute models.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeTopology {
    pub mode: Mode,
    pub algo: Algo,
    /// Learner-interface iterations between policy transfers.
    pub k: u64,
    pub local: ComputeModel,
    pub remote: ComputeModel,
}

impl ModeTopology {
    pub fn placement(&self, p: Process) -> Placement {
        table_placement(p, self.mode)
    }

    /// Host that runs a process, following `IncludedIn` links.
    pub fn host_of(&self, p: Process) -> Option<Host> {
        match self.placement(p) {
            Placement::On(h) => Some(h),
            Placement::IncludedIn(q) => self.host_of(q),
            Placement::Absent => None,
        }
    }

    /// Processes that run as their own task, with their hosts.
    pub fn live_processes(&self) -> Vec<(Process, Host)> {
        Process::ALL
            .iter()
            .filter_map(|&p| match self.placement(p) {
                Placement::On(h) => Some((p, h)),
                _ => None,
            })
            .collect()
    }

    pub fn actor_host(&self) -> Host {
        self.host_of(Process::ActionComputation).expect("actions are always computed")
    }

    pub fn learner_host(&self) -> Host {
        self.host_of(Process::Update).expect("updates always run")
    }

    pub fn compute(&self, h: Host) -> &ComputeModel {
        match h {
            Host::Local => &self.local,
            Host::Remote => &self.remote,
        }
    }

    /// Whether the two hosts exchange messages at all.
    pub fn uses_link(&self) -> bool {
        self.mode != Mode::LocalOnly
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Host::*;
    use Process::*;

    fn topo(mode: Mode, algo: Algo) -> ModeTopology {
        ModeTopology { mode, algo, k: 100, local: ComputeModel::laptop(), remote: ComputeModel::workstation() }
    }

    #[test]
    fn remote_local_sac_has_six_processes() {
        let t = topo(Mode::RemoteLocal, Algo::Sac);
        let live = t.live_processes();
        assert_eq!(
            live,
            vec![
                (AgentInterface, Local),
                (LocalSend, Local),
                (LocalReceive, Local),
                (LearnerInterface, Remote),
                (ReplayBuffer, Remote),
                (Update, Remote)
            ]
        );
        assert_eq!(t.actor_host(), Local);
        assert_eq!(t.learner_host(), Remote);
    }

    #[test]
    fn local_only_folds_everything_locally() {
        let t = topo(Mode::LocalOnly, Algo::Sac);
        assert_eq!(t.live_processes(), vec![(AgentInterface, Local), (ReplayBuffer, Local), (Update, Local)]);
        assert_eq!(t.placement(LearnerInterface), Placement::IncludedIn(AgentInterface));
        assert_eq!(t.placement(LocalSend), Placement::Absent);
        assert!(!t.uses_link());
    }

    #[test]
    fn remote_only_computes_actions_in_learner_interface() {
        let t = topo(Mode::RemoteOnly, Algo::Ppo);
        assert_eq!(t.placement(ActionComputation), Placement::IncludedIn(LearnerInterface));
        assert_eq!(t.actor_host(), Remote);
        assert_eq!(t.placement(LocalReceive), Placement::Absent);
    }

    #[test]
    fn presets_and_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert_eq!(ComputeModel::preset("jetson_emulated").unwrap().throttle_every, Some(12));
        assert_eq!(ComputeModel::preset("jetson_emulated").unwrap().update_cost, Duration::from_millis(500));
        assert!(ComputeModel::preset("mainframe").is_none());
        assert!("hybrid".parse::<Mode>().is_err());
    }
}
