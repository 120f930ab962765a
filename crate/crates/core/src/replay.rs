//! Experience replay.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// One joint step: critic inputs, per-agent actor inputs and actions, and
/// the shared reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_observations: Vec<Vec<f64>>,
}

/// Fixed-capacity FIFO ring.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("train.buffer_capacity", "must be at least 1"));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            next: 0,
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

    /// Appends, evicting the oldest entry once full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.reward.is_finite() {
            return Err(Error::Numeric(format!("non-finite reward {}", t.reward)));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// Oldest entry still stored.
    pub fn oldest(&self) -> Option<&Transition> {
        if self.items.len() < self.capacity {
            self.items.first()
        } else {
            self.items.get(self.next)
        }
    }

    /// Uniform minibatch without replacement (the whole buffer if smaller).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Vec<&Transition> {
        let n = batch.min(self.items.len());
        index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::stream;

    fn tr(r: f64) -> Transition {
        Transition {
            state: vec![r],
            observations: vec![],
            actions: vec![],
            reward: r,
            next_state: vec![],
            next_observations: vec![],
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push(tr(i as f64)).unwrap();
            assert!(b.len() <= 3);
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.oldest().unwrap().reward, 2.0);
        let mut rewards: Vec<f64> = b
            .sample(&mut stream(0, 0), 10)
            .iter()
            .map(|t| t.reward)
            .collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let mut b = ReplayBuffer::new(100).unwrap();
        for i in 0..100 {
            b.push(tr(i as f64)).unwrap();
        }
        let a: Vec<f64> = b
            .sample(&mut stream(4, 2), 32)
            .iter()
            .map(|t| t.reward)
            .collect();
        let c: Vec<f64> = b
            .sample(&mut stream(4, 2), 32)
            .iter()
            .map(|t| t.reward)
            .collect();
        assert_eq!(a, c);
        assert_eq!(a.len(), 32);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ReplayBuffer::new(0).is_err());
        let mut b = ReplayBuffer::new(2).unwrap();
        assert!(b.push(tr(f64::INFINITY)).is_err());
    }
}
