use std::collections::VecDeque;

use rand::Rng;

use super::env::Action;

pub const REPLAY_CAPACITY: usize = 15_000;

/// Compact transition: the image is stored by index, the state by its flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transition {
    pub pred_corr_prev: u8,
    pub image_index: usize,
    pub action: Action,
    pub reward: i8,
    pub pred_corr_new: u8,
    pub terminal: bool,
}

/// FIFO replay memory; the oldest transition is evicted once full.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl Default for ReplayBuffer {
    fn default() -> Self {
        Self::new(REPLAY_CAPACITY)
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: VecDeque::with_capacity(capacity.min(REPLAY_CAPACITY)) }
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
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` distinct transitions drawn uniformly without replacement, or
    /// `None` while the buffer holds fewer than `n`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<Transition>> {
        if n == 0 || self.items.len() < n {
            return None;
        }
        let picks = rand::seq::index::sample(rng, self.items.len(), n);
        Some(picks.iter().map(|i| self.items[i]).collect())
    }

    /// Indices that [`sample`](Self::sample) would draw; exposed for audits.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<usize>> {
        if n == 0 || self.items.len() < n {
            return None;
        }
        Some(rand::seq::index::sample(rng, self.items.len(), n).into_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(i: usize) -> Transition {
        Transition {
            pred_corr_prev: 0,
            image_index: i,
            action: Action::PredictNormal,
            reward: -1,
            pred_corr_new: 0,
            terminal: false,
        }
    }

    #[test]
    fn capacity_and_eviction() {
        let mut b = ReplayBuffer::default();
        b.push(t(0));
        assert_eq!(b.len(), 1);
        for i in 1..=15_000 {
            b.push(t(i));
        }
        assert_eq!(b.len(), 15_000);
        assert_eq!(b.iter().next().unwrap().image_index, 1);
        assert!(b.iter().all(|x| x.image_index != 0));
    }

    #[test]
    fn sampling() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..24 {
            b.push(t(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut all: Vec<usize> = b.sample(24, &mut rng).unwrap().iter().map(|x| x.image_index).collect();
        all.sort_unstable();
        assert_eq!(all, (0..24).collect::<Vec<_>>());
        assert!(b.sample(25, &mut rng).is_none());

        for i in 24..100 {
            b.push(t(i));
        }
        let mut idx = b.sample_indices(24, &mut rng).unwrap();
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 24);

        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            assert_eq!(b.sample(24, &mut r1), b.sample(24, &mut r2));
        }
    }
}
