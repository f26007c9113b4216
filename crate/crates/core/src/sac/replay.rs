use rand::Rng;
use thiserror::Error;

use crate::types::Transition;

/// Sampling was requested before enough transitions arrived; the update
/// worker idles for a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("replay buffer holds {size} transitions, {needed} needed")]
pub struct NotReady {
    pub size: usize,
    pub needed: usize,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    write_cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { capacity, storage: Vec::with_capacity(capacity.min(1 << 16)), write_cursor: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn is_ready(&self, k: usize) -> bool {
        self.len() >= k && k > 0
    }

    /// O(1) ring write; once full, overwrites the oldest entry.
    pub fn insert(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.write_cursor] = t;
        }
        self.write_cursor = (self.write_cursor + 1) % self.capacity;
    }

    /// `k` draws, uniform with replacement over the current contents.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<&Transition>, NotReady> {
        if !self.is_ready(k) {
            return Err(NotReady { size: self.len(), needed: k });
        }
        let n = self.storage.len();
        Ok((0..k).map(|_| &self.storage[rng.random_range(0..n)]).collect())
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity { 0 } else { self.write_cursor };
        self.storage[split..].iter().chain(self.storage[..split].iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::dummy_transition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3);
        for id in 1..=4 {
            b.insert(dummy_transition(id));
        }
        let ids: Vec<u64> = b.iter().map(|t| t.episode_id).collect();
        assert_eq!(ids, vec![2, 3, 4]);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn under_filled_buffer_is_not_ready() {
        let mut b = ReplayBuffer::new(10);
        b.insert(dummy_transition(1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(b.sample(2, &mut rng).unwrap_err(), NotReady { size: 1, needed: 2 });
    }

    #[test]
    fn samples_are_members() {
        let mut b = ReplayBuffer::new(8);
        for id in 10..15 {
            b.insert(dummy_transition(id));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = b.sample(b.len(), &mut rng).unwrap();
        assert!(s.iter().all(|t| (10..15).contains(&t.episode_id)));
    }
}
