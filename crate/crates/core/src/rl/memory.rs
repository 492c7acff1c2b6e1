use std::collections::VecDeque;

use rand::Rng;

/// One stored training step: the state the question was chosen in, the
/// question and answer, the target, the advantage `r' - V(s)` and the
/// reward network's regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub state: Vec<f64>,
    pub asked: Vec<bool>,
    pub question: usize,
    pub selected: Vec<usize>,
    pub target: usize,
    pub advantage: f64,
    pub reward_target: f64,
}

/// Bounded FIFO buffer; the oldest entry is evicted once full.
#[derive(Debug, Clone)]
pub struct EpisodeMemory {
    capacity: usize,
    entries: VecDeque<MemoryEntry>,
}

impl EpisodeMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "memory capacity must be positive");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn push(&mut self, entry: MemoryEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    /// `size` entries drawn uniformly with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, rng: &mut R, size: usize) -> Vec<&'a MemoryEntry> {
        if self.entries.is_empty() {
            return Vec::new();
        }
        (0..size)
            .map(|_| &self.entries[rng.random_range(0..self.entries.len())])
            .collect()
    }
}
