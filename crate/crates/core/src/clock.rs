//! Integer-nanosecond time base shared by every simulated host.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::time::{Duration, Instant};

/// Nanoseconds since the start of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_millis(ms: u64) -> Self {
        Timestamp(ms * 1_000_000)
    }

    pub fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    /// Time elapsed since `earlier`, zero if `earlier` is in the future.
    pub fn since(self, earlier: Timestamp) -> Duration {
        Duration::from_nanos(self.0.saturating_sub(earlier.0))
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0 + duration_nanos(rhs))
    }
}

impl AddAssign<Duration> for Timestamp {
    fn add_assign(&mut self, rhs: Duration) {
        self.0 += duration_nanos(rhs);
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

pub(crate) fn duration_nanos(d: Duration) -> u64 {
    u64::try_from(d.as_nanos()).expect("duration overflows u64 nanoseconds")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClockMode {
    Virtual,
    Wall,
}

impl std::str::FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "virtual" => Ok(ClockMode::Virtual),
            "wall" => Ok(ClockMode::Wall),
            other => Err(format!("unknown clock mode `{other}` (expected virtual|wall)")),
        }
    }
}

/// Either a simulated clock that jumps, or a wall clock that sleeps.
///
/// Time never decreases in either mode.
#[derive(Clone, Debug)]
pub struct Clock {
    mode: ClockMode,
    now: Timestamp,
    origin: Instant,
}

impl Clock {
    pub fn new(mode: ClockMode) -> Self {
        Clock { mode, now: Timestamp::ZERO, origin: Instant::now() }
    }

    pub fn virtual_clock() -> Self {
        Self::new(ClockMode::Virtual)
    }

    pub fn wall() -> Self {
        Self::new(ClockMode::Wall)
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn now(&self) -> Timestamp {
        match self.mode {
            ClockMode::Virtual => self.now,
            ClockMode::Wall => self.now.max(self.elapsed()),
        }
    }

    fn elapsed(&self) -> Timestamp {
        Timestamp(duration_nanos(self.origin.elapsed()))
    }

    /// Moves the clock forward by `dt`.
    ///
    /// Virtual clocks advance by exactly `dt`. Wall clocks sleep until the
    /// target instant and then report the actual time, which may overshoot.
    pub fn advance(&mut self, dt: Duration) -> Timestamp {
        let target = self.now + dt;
        self.advance_to(target)
    }

    /// Moves the clock to `target`; a target in the past leaves it unchanged.
    pub fn advance_to(&mut self, target: Timestamp) -> Timestamp {
        match self.mode {
            ClockMode::Virtual => {
                self.now = self.now.max(target);
            }
            ClockMode::Wall => {
                let elapsed = self.elapsed();
                if target > elapsed {
                    std::thread::sleep(target.since(elapsed));
                }
                self.now = self.now.max(target).max(self.elapsed());
            }
        }
        self.now
    }

    /// Value-style variant of [`Clock::advance`].
    pub fn advanced(mut self, dt: Duration) -> Self {
        self.advance(dt);
        self
    }
}
