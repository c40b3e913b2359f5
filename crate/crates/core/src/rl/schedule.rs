use serde::{Deserialize, Serialize};

/// Linear ε decay with a floor: `ε(k) = max(eps0 - k·delta, eps_min)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub eps0: f64,
    pub delta: f64,
    pub eps_min: f64,
    #[serde(skip)]
    decay_count: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self::new(0.7, 1e-4, 1e-4)
    }
}

impl EpsilonSchedule {
    pub fn new(eps0: f64, delta: f64, eps_min: f64) -> Self {
        Self { eps0, delta, eps_min, decay_count: 0 }
    }

    pub fn at(&self, k: u64) -> f64 {
        (self.eps0 - k as f64 * self.delta).max(self.eps_min)
    }

    pub fn value(&self) -> f64 {
        self.at(self.decay_count)
    }

    pub fn decay(&mut self) {
        self.decay_count += 1;
    }

    pub fn decay_count(&self) -> u64 {
        self.decay_count
    }
}

pub fn epsilon_value(schedule: &EpsilonSchedule, k: u64) -> f64 {
    schedule.at(k)
}
