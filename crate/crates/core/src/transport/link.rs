use std::time::Duration;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::clock::{duration_nanos, Timestamp};

/// Extra per-message delay on top of the base delay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Jitter {
    None,
    Uniform { lo: Duration, hi: Duration },
    /// Normal truncated at zero by rejection.
    Normal { mean: Duration, std: Duration },
}

impl Jitter {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            Jitter::None => 0,
            Jitter::Uniform { lo, hi } => {
                let (lo, hi) = (duration_nanos(lo), duration_nanos(hi));
                if hi > lo {
                    rng.random_range(lo..=hi)
                } else {
                    lo
                }
            }
            Jitter::Normal { mean, std } => {
                let (m, s) = (duration_nanos(mean) as f64, duration_nanos(std) as f64);
                if s == 0.0 {
                    return m as u64;
                }
                let dist = Normal::new(m, s).expect("finite normal parameters");
                for _ in 0..1000 {
                    let x: f64 = dist.sample(rng);
                    if x >= 0.0 {
                        return x.round() as u64;
                    }
                }
                0
            }
        }
    }
}

impl std::str::FromStr for Jitter {
    type Err = String;

    /// `none`, `uniform:LO:HI` or `normal:MEAN:STD`, all in milliseconds.
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let ms = |v: &str| -> Result<Duration, String> {
            let x: f64 = v.parse().map_err(|_| format!("bad jitter value `{v}`"))?;
            if !(x.is_finite() && x >= 0.0) {
                return Err(format!("jitter value `{v}` must be a non-negative number"));
            }
            Ok(Duration::from_nanos((x * 1e6).round() as u64))
        };
        match parts.as_slice() {
            ["none"] => Ok(Jitter::None),
            ["uniform", lo, hi] => {
                let (lo, hi) = (ms(lo)?, ms(hi)?);
                if hi < lo {
                    return Err("uniform jitter needs lo <= hi".into());
                }
                Ok(Jitter::Uniform { lo, hi })
            }
            ["normal", m, sd] => Ok(Jitter::Normal { mean: ms(m)?, std: ms(sd)? }),
            _ => Err(format!("bad jitter `{s}` (expected none | uniform:LO:HI | normal:MEAN:STD, ms)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkModel {
    pub base_delay: Duration,
    pub jitter: Jitter,
    pub drop_rate: f64,
    /// When false, deliveries never overtake each other.
    pub reorder: bool,
}

impl LinkModel {
    pub fn ideal() -> Self {
        LinkModel { base_delay: Duration::ZERO, jitter: Jitter::None, drop_rate: 0.0, reorder: false }
    }

    /// Wired loopback-like: 0.1 ms, no jitter.
    pub fn wired() -> Self {
        LinkModel { base_delay: Duration::from_micros(100), ..Self::ideal() }
    }

    /// Wireless-like: 5 ms base plus uniform 0–80 ms jitter.
    pub fn wifi() -> Self {
        LinkModel {
            base_delay: Duration::from_millis(5),
            jitter: Jitter::Uniform { lo: Duration::ZERO, hi: Duration::from_millis(80) },
            ..Self::ideal()
        }
    }

    pub fn fixed(delay: Duration) -> Self {
        LinkModel { base_delay: delay, ..Self::ideal() }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "ideal" => Some(Self::ideal()),
            "wired" => Some(Self::wired()),
            "wifi" => Some(Self::wifi()),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Delivery {
    At(Timestamp),
    Dropped,
}

/// One direction of a link: the model plus its jitter stream and FIFO state.
#[derive(Clone, Debug)]
pub struct Link {
    model: LinkModel,
    rng: ChaCha8Rng,
    last_delivery: Timestamp,
    sent: u64,
    dropped: u64,
}

impl Link {
    pub fn new(model: LinkModel, rng: ChaCha8Rng) -> Self {
        Link { model, rng, last_delivery: Timestamp::ZERO, sent: 0, dropped: 0 }
    }

    pub fn model(&self) -> &LinkModel {
        &self.model
    }

    /// Schedules a message sent at `now`.
    pub fn send(&mut self, now: Timestamp) -> Delivery {
        self.sent += 1;
        if self.model.drop_rate > 0.0 && self.rng.random_bool(self.model.drop_rate.min(1.0)) {
            self.dropped += 1;
            return Delivery::Dropped;
        }
        let mut at = Timestamp(now.as_nanos() + duration_nanos(self.model.base_delay) + self.model.jitter.draw(&mut self.rng));
        if !self.model.reorder {
            at = at.max(self.last_delivery);
        }
        self.last_delivery = self.last_delivery.max(at);
        Delivery::At(at)
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}
