use rand::Rng;

use super::{Dataset, DatasetError, Transition};

pub const DEFAULT_CAPACITY: usize = 1_000_000;

/// Fixed-capacity ring of transitions; the oldest entry is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Index of the oldest item once the ring is full.
    head: usize,
}

impl Default for ReplayBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            head: 0,
        }
    }

    /// A buffer pre-filled with `dataset`, at least large enough to hold all of it.
    pub fn from_dataset(dataset: &Dataset, capacity: usize) -> Self {
        let mut buf = Self::new(capacity.max(dataset.len()).max(1));
        buf.extend(dataset.transitions.iter().cloned());
        buf
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        for t in ts {
            self.push(t);
        }
    }

    /// The `i`-th oldest stored transition.
    pub fn get(&self, i: usize) -> Option<&Transition> {
        if i >= self.items.len() {
            return None;
        }
        Some(&self.items[(self.head + i) % self.items.len()])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        (0..self.len()).map(move |i| self.get(i).expect("in range"))
    }

    /// `batch` independent uniform draws with replacement.
    pub fn sample_batch<'a, R: Rng + ?Sized>(&'a self, batch: usize, rng: &mut R) -> Result<Vec<&'a Transition>, DatasetError> {
        if self.items.is_empty() {
            return Err(DatasetError::EmptyBuffer);
        }
        Ok((0..batch).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }

    /// Storage indices of a batch, for callers that need to count draws.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>, DatasetError> {
        if self.items.is_empty() {
            return Err(DatasetError::EmptyBuffer);
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }
}
