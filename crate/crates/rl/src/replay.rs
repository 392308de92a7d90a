//! Fixed-capacity ring buffer of transitions with a seeded sampler.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Logits as emitted by the behaviour policy, noise included.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

impl Transition {
    fn is_finite(&self) -> bool {
        self.reward.is_finite()
            && self.state.iter().chain(&self.action).chain(&self.next_state).all(|v| v.is_finite())
    }
}

/// A stacked mini-batch, one transition per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    /// 1.0 for terminal transitions.
    pub dones: Vec<f64>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (sd, ad) = (first.state.len(), first.action.len());
        let n = items.len();
        let mut states = Vec::with_capacity(n * sd);
        let mut actions = Vec::with_capacity(n * ad);
        let mut next_states = Vec::with_capacity(n * sd);
        for t in items {
            if t.state.len() != sd || t.next_state.len() != sd || t.action.len() != ad {
                return Err(Error::Shape("transitions in a batch differ in shape".into()));
            }
            states.extend_from_slice(&t.state);
            actions.extend_from_slice(&t.action);
            next_states.extend_from_slice(&t.next_state);
        }
        Ok(Batch {
            states: Array2::from_shape_vec((n, sd), states).expect("sized"),
            actions: Array2::from_shape_vec((n, ad), actions).expect("sized"),
            rewards: items.iter().map(|t| t.reward).collect(),
            next_states: Array2::from_shape_vec((n, sd), next_states).expect("sized"),
            dones: items.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
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

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::Divergence("non-finite transition".into()));
        }
        if let Some(first) = self.items.first() {
            if first.state.len() != t.state.len() || first.action.len() != t.action.len() {
                return Err(Error::Shape("transition shape differs from buffer contents".into()));
            }
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices(&mut self, batch: usize) -> Result<Vec<usize>> {
        if batch == 0 || self.items.len() < batch {
            return Err(Error::BufferTooSmall {
                size: self.items.len(),
                batch,
            });
        }
        let n = self.items.len();
        Ok((0..batch).map(|_| self.rng.random_range(0..n)).collect())
    }

    pub fn sample(&mut self, batch: usize) -> Result<Batch> {
        let idx = self.sample_indices(batch)?;
        let picked: Vec<&Transition> = idx.iter().map(|&i| &self.items[i]).collect();
        Batch::from_transitions(&picked)
    }
}
