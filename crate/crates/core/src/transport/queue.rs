use std::collections::VecDeque;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PushOutcome {
    Accepted,
    /// The queue was full. The item is parked and the producer must wait
    /// until a `pop` admits it.
    Blocked,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QueueStats {
    pub pushed: u64,
    pub popped: u64,
    pub blocked_pushes: u64,
    pub max_occupancy: usize,
    occupancy_sum: u128,
    samples: u64,
}

impl QueueStats {
    pub fn mean_occupancy(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.occupancy_sum as f64 / self.samples as f64
        }
    }
}

/// FIFO with a hard capacity. Pushing into a full queue never drops: the
/// item waits in a parked list that drains, in order, as space frees up.
#[derive(Clone, Debug)]
pub struct BoundedQueue<T> {
    capacity: usize,
    items: VecDeque<T>,
    parked: VecDeque<T>,
    stats: QueueStats,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        BoundedQueue { capacity, items: VecDeque::with_capacity(capacity.min(4096)), parked: VecDeque::new(), stats: QueueStats::default() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    /// Producers currently waiting for space.
    pub fn parked(&self) -> usize {
        self.parked.len()
    }

    pub fn stats(&self) -> QueueStats {
        self.stats
    }

    fn sample(&mut self) {
        self.stats.max_occupancy = self.stats.max_occupancy.max(self.items.len());
        self.stats.occupancy_sum += self.items.len() as u128;
        self.stats.samples += 1;
    }

    pub fn push(&mut self, item: T) -> PushOutcome {
        self.stats.pushed += 1;
        let outcome = if self.is_full() || !self.parked.is_empty() {
            self.stats.blocked_pushes += 1;
            self.parked.push_back(item);
            PushOutcome::Blocked
        } else {
            self.items.push_back(item);
            PushOutcome::Accepted
        };
        self.sample();
        outcome
    }

    pub fn pop(&mut self) -> Option<T> {
        let item = self.items.pop_front()?;
        self.stats.popped += 1;
        if let Some(p) = self.parked.pop_front() {
            self.items.push_back(p);
        }
        self.sample();
        Some(item)
    }

    pub fn drain(&mut self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.items.len() + self.parked.len());
        while let Some(x) = self.pop() {
            out.push(x);
        }
        out
    }
}
