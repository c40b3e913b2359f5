use serde::{Deserialize, Serialize};

use super::buffer::{Transition, REPLAY_CAPACITY};
use super::env::{env_step, Action};
use super::schedule::EpsilonSchedule;
use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::model::DqnNetwork;
use crate::phantom::{Label, LabeledVolume};

/// Hyperparameters of the Q-learning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QLearningSpec {
    /// Discount factor γ of the return `Σ γ^k r_{t+k}`.
    pub gamma: f64,
    pub steps_per_episode: usize,
    pub episodes: usize,
    pub batch: usize,
    pub test_every: usize,
    pub lr: f64,
    pub buffer_capacity: usize,
    pub epsilon: EpsilonSchedule,
}

impl Default for QLearningSpec {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            steps_per_episode: 5,
            episodes: 145,
            batch: 24,
            test_every: 10,
            lr: 1e-4,
            buffer_capacity: REPLAY_CAPACITY,
            epsilon: EpsilonSchedule::default(),
        }
    }
}

impl QLearningSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("gamma {} must lie in (0, 1)", self.gamma)));
        }
        if self.steps_per_episode == 0 || self.batch == 0 || self.test_every == 0 || self.buffer_capacity == 0 {
            return Err(Error::invalid("steps, batch, test interval and buffer capacity must be positive"));
        }
        if self.buffer_capacity < self.batch {
            return Err(Error::invalid("buffer capacity is smaller than the batch"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.eps0) || !(0.0..=1.0).contains(&e.eps_min) || e.delta < 0.0 {
            return Err(Error::invalid("epsilon schedule values must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One-step TD target: `r` at a terminal step, else `r + γ·max_a Q(s', a)`.
pub fn bootstrap_target(reward: i8, terminal: bool, max_next_q: f64, gamma: f64) -> f64 {
    if terminal {
        reward as f64
    } else {
        reward as f64 + gamma * max_next_q
    }
}

/// TD target of a stored transition, bootstrapping from `net` at
/// `s' = (same image, pred_corr_new)`.
pub fn td_target<T: Scalar>(
    transition: &Transition,
    net: &DqnNetwork<T>,
    spec: &QLearningSpec,
    volumes: &[LabeledVolume],
) -> Result<f64> {
    if transition.terminal {
        return Ok(bootstrap_target(transition.reward, true, 0.0, spec.gamma));
    }
    let image = volumes
        .get(transition.image_index)
        .ok_or_else(|| Error::Lookup(format!("image index {} not in training set", transition.image_index)))?;
    let q = net.forward(&image.volume, transition.pred_corr_new)?;
    let max_next = q[0].max(q[1]).as_f64();
    Ok(bootstrap_target(transition.reward, false, max_next, spec.gamma))
}

/// `Σ_{i=0}^{steps-1-k} γ^i`: value of always predicting correctly from step `k`.
pub fn optimal_value(k: usize, steps: usize, gamma: f64) -> f64 {
    (0..steps.saturating_sub(k)).map(|i| gamma.powi(i as i32)).sum()
}

/// Lookup-table Q function over `(step index, pred_corr)` for one image.
///
/// Used as an exact stand-in for the network: the same TD update applied
/// to a table must reach the closed-form optimum.
#[derive(Clone, Debug)]
pub struct TabularQ {
    steps: usize,
    table: Vec<[f64; 2]>,
}

impl TabularQ {
    pub fn new(steps: usize) -> Self {
        Self { steps, table: vec![[0.0; 2]; steps * 2] }
    }

    pub fn get(&self, step: usize, pred_corr: u8, action: Action) -> f64 {
        self.table[step * 2 + pred_corr as usize][action.index()]
    }

    fn max_at(&self, step: usize, pred_corr: u8) -> f64 {
        let row = self.table[step * 2 + pred_corr as usize];
        row[0].max(row[1])
    }

    /// One sweep of `Q ← Q + lr·(target − Q)` over every `(step, flag, action)`.
    /// Returns the largest absolute change.
    pub fn sweep(&mut self, label: Label, gamma: f64, lr: f64) -> f64 {
        let mut largest = 0.0f64;
        for step in 0..self.steps {
            for pred_corr in 0..2u8 {
                for action in Action::ALL {
                    let (reward, next) = env_step(label, action);
                    let terminal = step + 1 == self.steps;
                    let max_next = if terminal { 0.0 } else { self.max_at(step + 1, next) };
                    let target = bootstrap_target(reward, terminal, max_next, gamma);
                    let cell = &mut self.table[step * 2 + pred_corr as usize][action.index()];
                    let change = lr * (target - *cell);
                    *cell += change;
                    largest = largest.max(change.abs());
                }
            }
        }
        largest
    }

    /// Sweeps until every correct-action entry is within `tol` of
    /// [`optimal_value`], up to `max_sweeps`. Returns the sweeps used.
    pub fn train(&mut self, label: Label, gamma: f64, lr: f64, tol: f64, max_sweeps: usize) -> Option<usize> {
        let correct = Action::from_index(label.as_index());
        for n in 1..=max_sweeps {
            self.sweep(label, gamma, lr);
            let converged = (0..self.steps).all(|k| {
                (0..2u8).all(|pc| (self.get(k, pc, correct) - optimal_value(k, self.steps, gamma)).abs() < tol)
            });
            if converged {
                return Some(n);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets() {
        assert_eq!(bootstrap_target(1, true, 123.0, 0.99), 1.0);
        assert!((bootstrap_target(1, false, 4.0, 0.99) - 4.96).abs() < 1e-12);
        assert!((bootstrap_target(-1, false, 0.0, 0.99) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_values() {
        // 1 + .99 + .99² + .99³ + .99⁴
        assert!((optimal_value(0, 5, 0.99) - 4.90099501).abs() < 1e-12);
        assert!((optimal_value(4, 5, 0.99) - 1.0).abs() < 1e-12);
        assert_eq!(optimal_value(5, 5, 0.99), 0.0);
    }

    #[test]
    fn spec_validation() {
        assert!(QLearningSpec::default().validate().is_ok());
        assert!(QLearningSpec { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(QLearningSpec { batch: 0, ..Default::default() }.validate().is_err());
    }
}
