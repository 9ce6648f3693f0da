use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::stategraph::HeteroGraph;

/// Encoder input for one decision.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Graph(HeteroGraph),
    Flat(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Arc<Observation>,
    pub mask: Vec<bool>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Arc<Observation>,
    pub next_mask: Vec<bool>,
    pub done: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("cannot sample from an empty replay buffer")]
    Empty,
    #[error("replay capacity must be positive")]
    ZeroCapacity,
    #[error("stored action {action} is masked out")]
    MaskedAction { action: usize },
    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),
}

/// Fixed-capacity ring buffer; the oldest entry is overwritten when full.
#[derive(Debug, Clone)]
pub struct Replay {
    items: Vec<Transition>,
    capacity: usize,
    head: usize,
}

impl Replay {
    pub fn new(capacity: usize) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(Replay {
            items: Vec::new(),
            capacity,
            head: 0,
        })
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

    pub fn push(&mut self, t: Transition) -> Result<(), ReplayError> {
        if !t.mask.get(t.action).copied().unwrap_or(false) {
            return Err(ReplayError::MaskedAction { action: t.action });
        }
        if !t.reward.is_finite() {
            return Err(ReplayError::NonFiniteReward(t.reward));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (a, b) = self.items.split_at(self.head);
        b.iter().chain(a)
    }

    /// Uniform indices with replacement.
    pub fn sample_indices(
        &self,
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>, ReplayError> {
        if self.items.is_empty() {
            return Err(ReplayError::Empty);
        }
        Ok((0..batch)
            .map(|_| rng.random_range(0..self.items.len()))
            .collect())
    }

    pub fn sample(
        &self,
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<&Transition>, ReplayError> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn t(reward: f64) -> Transition {
        let obs = Arc::new(Observation::Flat(vec![0.0]));
        Transition {
            state: obs.clone(),
            mask: vec![true, true],
            action: 1,
            reward,
            next_state: obs,
            next_mask: vec![true, true],
            done: false,
        }
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut r = Replay::new(3).unwrap();
        for i in 0..4 {
            r.push(t(i as f64)).unwrap();
        }
        let rewards: Vec<f64> = r.iter().map(|x| x.reward).collect();
        assert_eq!(rewards, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn sampling_is_seeded_and_rejects_empty() {
        let mut r = Replay::new(10).unwrap();
        assert_eq!(r.sample_indices(4, &mut rng_for(1)), Err(ReplayError::Empty));
        for i in 0..10 {
            r.push(t(i as f64)).unwrap();
        }
        let a = r.sample_indices(50, &mut rng_for(7)).unwrap();
        let b = r.sample_indices(50, &mut rng_for(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut r = Replay::new(10).unwrap();
        for i in 0..10 {
            r.push(t(i as f64)).unwrap();
        }
        let mut counts = [0usize; 10];
        for i in r.sample_indices(10_000, &mut rng_for(3)).unwrap() {
            counts[i] += 1;
        }
        // Binomial(10000, 0.1): σ = 30.
        for c in counts {
            assert!((c as f64 - 1000.0).abs() <= 90.0, "{counts:?}");
        }
    }

    #[test]
    fn rejects_masked_action_and_nan() {
        let mut r = Replay::new(2).unwrap();
        let mut bad = t(0.0);
        bad.mask[1] = false;
        assert_eq!(r.push(bad), Err(ReplayError::MaskedAction { action: 1 }));
        assert!(matches!(r.push(t(f64::NAN)), Err(ReplayError::NonFiniteReward(_))));
    }
}
