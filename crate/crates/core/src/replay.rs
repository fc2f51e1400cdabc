//! Bounded FIFO replay buffer.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

impl Transition {
    pub fn check(&self) -> Result<()> {
        let unit = |v: &[f64]| v.iter().all(|x| (0.0..=1.0).contains(x));
        if !unit(&self.state) || !unit(&self.next_state) || !unit(&self.action) {
            return Err(Error::Definition("transition vectors must lie in [0, 1]".into()));
        }
        if self.state.len() != self.next_state.len() {
            return Err(Error::shape("transition next_state", self.state.len(), self.next_state.len()));
        }
        if !self.reward.is_finite() {
            return Err(Error::Definition("transition reward is not finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 64;

    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    pub fn push(&mut self, transition: Transition) -> Result<()> {
        transition.check()?;
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(transition);
        Ok(())
    }

    /// Uniform draws: without replacement when the buffer holds at least
    /// `batch_size` entries, with replacement otherwise.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = self.entries.len();
        if n >= batch_size {
            Ok(index::sample(rng, n, batch_size).into_iter().map(|i| &self.entries[i]).collect())
        } else {
            Ok((0..batch_size).map(|_| &self.entries[rng.random_range(0..n)]).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(r: f64) -> Transition {
        Transition {
            state: vec![0.5],
            action: vec![0.5],
            reward: r,
            next_state: vec![0.5],
        }
    }

    fn rewards(b: &ReplayBuffer) -> Vec<f64> {
        b.iter().map(|t| t.reward).collect()
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3);
        b.push(t(1.0)).unwrap();
        assert_eq!(b.len(), 1);
        for r in 2..=4 {
            b.push(t(r as f64)).unwrap();
        }
        assert_eq!(rewards(&b), vec![2.0, 3.0, 4.0]);

        let mut b = ReplayBuffer::new(1);
        b.push(t(1.0)).unwrap();
        b.push(t(2.0)).unwrap();
        assert_eq!(rewards(&b), vec![2.0]);
    }

    #[test]
    fn rejects_invalid_transitions() {
        let mut b = ReplayBuffer::new(2);
        let mut bad = t(0.0);
        bad.action = vec![1.5];
        assert!(b.push(bad).is_err());
        assert!(b.push(t(f64::INFINITY)).is_err());
        assert!(b.is_empty());
    }

    #[test]
    fn sampling_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = ReplayBuffer::new(4);
        assert!(matches!(b.sample(1, &mut rng), Err(Error::EmptyBuffer)));

        let mut b = ReplayBuffer::new(4);
        b.push(t(7.0)).unwrap();
        let s = b.sample(4, &mut rng).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|x| x.reward == 7.0));

        let mut b = ReplayBuffer::new(10);
        for r in 0..10 {
            b.push(t(r as f64)).unwrap();
        }
        let mut got: Vec<f64> = b.sample(10, &mut rng).unwrap().iter().map(|x| x.reward).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, (0..10).map(|r| r as f64).collect::<Vec<_>>());
    }

    #[test]
    fn single_draws_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut b = ReplayBuffer::new(4);
        for r in 0..4 {
            b.push(t(r as f64)).unwrap();
        }
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[b.sample(1, &mut rng).unwrap()[0].reward as usize] += 1;
        }
        // binomial(10000, 1/4): sd = sqrt(10000 * 0.25 * 0.75)
        let sd = (10_000.0f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 2500.0).abs() <= 3.0 * sd, "{counts:?}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 2500.0).powi(2) / 2500.0).sum();
        // 3 dof, 99.9th percentile
        assert!(chi2 < 16.27, "chi2 {chi2}");
    }
}
