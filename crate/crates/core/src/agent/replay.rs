use rand::Rng;

use super::AgentError;
use crate::env::Feedback;
use crate::nn::Tensor;

/// One stored step `(s, a, r, s', done, f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Tensor<f32>,
    pub action: usize,
    pub reward: f64,
    pub next_observation: Tensor<f32>,
    /// True only for real terminations; time-limit cut-offs are stored as
    /// non-terminal so their targets still bootstrap.
    pub done: bool,
    pub feedback: Feedback,
}

impl Transition {
    /// A rejected step must be a zero-reward self-loop.
    pub fn check(&self) -> Result<(), AgentError> {
        if self.feedback.is_rejected() && (self.reward != 0.0 || self.observation != self.next_observation) {
            return Err(AgentError::Transition(format!(
                "rejected action {} has reward {} or a changed observation",
                self.action, self.reward
            )));
        }
        if self.observation.shape() != self.next_observation.shape() {
            return Err(AgentError::Transition(format!(
                "observation shapes differ: {:?} vs {:?}",
                self.observation.shape(),
                self.next_observation.shape()
            )));
        }
        Ok(())
    }
}

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            inserted: 0,
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

    /// Total number of pushes, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Stores a transition, evicting the oldest one when full.
    pub fn push(&mut self, t: Transition) -> Result<(), AgentError> {
        t.check()?;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Storage slot that will be overwritten by the next push.
    pub fn next_slot(&self) -> usize {
        self.next
    }

    pub fn sample_indices<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<&Transition> {
        self.sample_indices(rng, n).into_iter().map(|i| &self.items[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(tag: f32, feedback: Feedback) -> Transition {
        let obs = Tensor::from_slice(&[1], &[tag]).unwrap();
        Transition {
            observation: obs.clone(),
            action: 0,
            reward: 0.0,
            next_observation: obs,
            done: false,
            feedback,
        }
    }

    #[test]
    fn evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(t(i as f32, Feedback::Valid)).unwrap();
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.inserted(), 5);
        let mut tags: Vec<f32> = buf.iter().map(|x| x.observation.data()[0]).collect();
        tags.sort_by(f32::total_cmp);
        assert_eq!(tags, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_inconsistent_forbidden_step() {
        let mut buf = ReplayBuffer::new(2);
        let mut bad = t(1.0, Feedback::Rejected);
        bad.reward = 1.0;
        assert!(buf.push(bad).is_err());
        let mut moved = t(1.0, Feedback::Rejected);
        moved.next_observation = Tensor::from_slice(&[1], &[2.0]).unwrap();
        assert!(buf.push(moved).is_err());
        assert!(buf.is_empty());
    }

    #[test]
    fn samples_stay_in_range() {
        let mut buf = ReplayBuffer::new(10);
        for i in 0..4 {
            buf.push(t(i as f32, Feedback::Valid)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample_indices(&mut rng, 100).iter().all(|&i| i < 4));
    }
}
