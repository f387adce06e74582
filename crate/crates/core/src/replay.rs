//! Experience stores: the transition ring buffer and the per-interval optimal-action buffer.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// 1.0 only for environment termination; time-limit truncation stores 0.0.
    pub d: f64,
}

/// Row-stacked transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    pub dones: Vec<f64>,
}

impl Minibatch {
    pub fn from_transitions<'a, I>(items: I) -> Self
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let items: Vec<&Transition> = items.into_iter().collect();
        let ds = items.first().map_or(0, |t| t.s.len());
        let da = items.first().map_or(0, |t| t.a.len());
        let n = items.len();
        let mut states = Vec::with_capacity(n * ds);
        let mut actions = Vec::with_capacity(n * da);
        let mut next_states = Vec::with_capacity(n * ds);
        let mut rewards = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        for t in items {
            states.extend_from_slice(&t.s);
            actions.extend_from_slice(&t.a);
            next_states.extend_from_slice(&t.s_next);
            rewards.push(t.r);
            dones.push(t.d);
        }
        Self {
            states: Matrix::new(n, ds, states).expect("consistent state length"),
            actions: Matrix::new(n, da, actions).expect("consistent action length"),
            rewards,
            next_states: Matrix::new(n, ds, next_states).expect("consistent state length"),
            dones,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl TransitionBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            cursor: 0,
        }
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

    pub fn push(&mut self, item: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Stored transitions, oldest first.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.cursor
        };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_minibatch(&self, rng: &mut Rng, n: usize) -> Result<Minibatch> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let len = self.items.len();
        Ok(Minibatch::from_transitions(
            (0..n).map(|_| &self.items[rng.index(len)]),
        ))
    }

    /// Rebuilds a buffer from its oldest-first contents.
    pub fn from_ordered(capacity: usize, items: Vec<Transition>) -> Self {
        let mut buf = Self::new(capacity);
        for t in items {
            buf.push(t);
        }
        buf
    }
}

/// States paired with their optimal actions, collected between least-squares updates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LrBuffer {
    pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl LrBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, s: Vec<f64>, o: Vec<f64>) {
        self.pairs.push((s, o));
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.pairs
    }

    /// Returns every pair in insertion order and leaves the buffer empty.
    pub fn drain(&mut self) -> Vec<(Vec<f64>, Vec<f64>)> {
        std::mem::take(&mut self.pairs)
    }
}
