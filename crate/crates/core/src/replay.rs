use std::collections::VecDeque;

use daif_nn::ParamStore;
use rand::Rng;

/// Fixed-capacity FIFO experience memory.
#[derive(Clone, Debug)]
pub struct ReplayMemory<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> ReplayMemory<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    /// Appends `item`, evicting the oldest entry when full.
    pub fn push(&mut self, item: T) -> Option<T> {
        let evicted = if self.items.len() == self.capacity {
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(item);
        evicted
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_ready(&self, batch: usize) -> bool {
        self.items.len() >= batch
    }

    /// Uniform sample with replacement; `None` while fewer than `batch` items are held.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Option<Vec<&T>> {
        if !self.is_ready(batch) || batch == 0 {
            return None;
        }
        let n = self.items.len();
        Some((0..batch).map(|_| &self.items[rng.random_range(0..n)]).collect())
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}

/// Copies online parameters into the target every `period` ticks.
#[derive(Clone, Debug)]
pub struct TargetSync {
    pub period: u64,
    steps: u64,
}

impl TargetSync {
    pub fn new(period: u64) -> Self {
        assert!(period > 0);
        Self { period, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Advances the counter; returns true when a copy happened.
    pub fn tick(&mut self, online: &ParamStore, target: &mut ParamStore) -> bool {
        self.steps += 1;
        if self.steps % self.period == 0 {
            target.copy_from(online).expect("target and online networks share a layout");
            true
        } else {
            false
        }
    }
}
