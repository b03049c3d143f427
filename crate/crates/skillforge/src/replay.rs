//! Experience replay.
//!
//! One ring buffer holds both primitive transitions (duration 1, raw
//! reward) and skill transitions (duration k, discounted cumulative
//! reward, next observation from k steps later). Eviction is FIFO and
//! sampling is uniform with replacement.

use std::io::Write;

use rand::Rng;

use crate::env::Observation;
use crate::error::{Error, Result};

/// One stored experience. For a primitive action `duration` is 1 and
/// `reward` the raw step reward; for a skill, `duration` is the number of
/// primitive steps it ran and `reward` the discounted sum of the rewards
/// collected while it ran.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    /// Joint output index: a primitive action or a skill slot.
    pub choice: usize,
    pub reward: f64,
    pub next_obs: Observation,
    pub terminal: bool,
    pub duration: u32,
}

impl Transition {
    fn validate(&self) {
        assert!(self.duration >= 1, "transition duration must be at least 1");
        assert!(self.reward.is_finite(), "transition reward must be finite");
    }
}

/// Fixed-capacity FIFO ring with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    ring: Vec<Transition>,
    /// Next write slot once the ring is full.
    head: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "replay capacity must be at least 1");
        ReplayBuffer {
            capacity,
            ring: Vec::with_capacity(capacity.min(1 << 20)),
            head: 0,
            inserted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    /// Transitions pushed over the buffer's lifetime, including evicted
    /// ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Appends a transition, evicting the oldest when full.
    pub fn push(&mut self, t: Transition) {
        t.validate();
        if self.ring.len() < self.capacity {
            self.ring.push(t);
        } else {
            self.ring[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        self.inserted += 1;
    }

    /// `n` uniform draws with replacement.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if self.ring.is_empty() {
            return Err(Error::EmptyReplay);
        }
        assert!(n >= 1, "sample size must be at least 1");
        Ok((0..n)
            .map(|_| self.ring[rng.gen_range(0..self.ring.len())])
            .collect())
    }

    /// Iterates the current contents in storage order (not insertion
    /// order once the ring has wrapped).
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.ring.iter()
    }

    /// Writes one line per stored transition for debugging.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.ring {
            writeln!(
                out,
                "choice={} reward={} duration={} terminal={}",
                t.choice, t.reward, t.duration, t.terminal
            )?;
        }
        Ok(())
    }
}
