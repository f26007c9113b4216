/// How often the update worker may run relative to environment steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThrottleMode {
    /// As fast as the hardware allows.
    BackToBack,
    /// At most `⌊steps / n⌋` updates after `steps` environment steps.
    EveryNSteps(u64),
}

impl std::str::FromStr for ThrottleMode {
    type Err = String;

    /// `back_to_back` or `every:N`.
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "back_to_back" {
            return Ok(ThrottleMode::BackToBack);
        }
        match s.strip_prefix("every:").map(str::parse::<u64>) {
            Some(Ok(n)) if n >= 1 => Ok(ThrottleMode::EveryNSteps(n)),
            _ => Err(format!("bad throttle `{s}` (expected back_to_back or every:N with N >= 1)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateThrottle {
    pub mode: ThrottleMode,
    granted: u64,
}

impl UpdateThrottle {
    pub fn new(mode: ThrottleMode) -> Self {
        if let ThrottleMode::EveryNSteps(n) = mode {
            assert!(n >= 1, "throttle interval must be at least 1");
        }
        UpdateThrottle { mode, granted: 0 }
    }

    pub fn back_to_back() -> Self {
        Self::new(ThrottleMode::BackToBack)
    }

    pub fn every_n_steps(n: u64) -> Self {
        Self::new(ThrottleMode::EveryNSteps(n))
    }

    /// Whether an update may start after `step_count` environment steps.
    pub fn permits(&self, step_count: u64) -> bool {
        match self.mode {
            ThrottleMode::BackToBack => true,
            ThrottleMode::EveryNSteps(n) => step_count / n > self.granted,
        }
    }

    /// Records that an update was started.
    pub fn consume(&mut self) {
        self.granted += 1;
    }

    pub fn granted(&self) -> u64 {
        self.granted
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_twelve_steps() {
        let mut t = UpdateThrottle::every_n_steps(12);
        let mut updates = 0;
        for step in 1..=100u64 {
            if t.permits(step) {
                t.consume();
                updates += 1;
            }
        }
        assert_eq!(updates, 100 / 12);
    }

    #[test]
    fn parse() {
        assert_eq!("every:12".parse::<ThrottleMode>().unwrap(), ThrottleMode::EveryNSteps(12));
        assert_eq!("back_to_back".parse::<ThrottleMode>().unwrap(), ThrottleMode::BackToBack);
        assert!("every:0".parse::<ThrottleMode>().is_err());
    }
}
