use rand::Rng;

use super::env::Action;
use crate::autodiff::Scalar;

/// Greedy action; a tie goes to [`Action::PredictNormal`].
pub fn greedy<T: Scalar>(q: [T; 2]) -> Action {
    if q[1] > q[0] {
        Action::PredictTumor
    } else {
        Action::PredictNormal
    }
}

/// ε-greedy: with probability `epsilon` a uniformly random action,
/// otherwise [`greedy`].
pub fn select_action<T: Scalar, R: Rng + ?Sized>(q: [T; 2], epsilon: f64, rng: &mut R) -> Action {
    if rng.random::<f64>() < epsilon {
        Action::from_index(rng.random_range(0..2))
    } else {
        greedy(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action([0.2, 0.9], 0.0, &mut rng), Action::PredictTumor);
        assert_eq!(select_action([0.4, 0.4], 0.0, &mut rng), Action::PredictNormal);
    }

    #[test]
    fn full_exploration_is_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let ones = (0..n).filter(|_| select_action([5.0, -5.0], 1.0, &mut rng) == Action::PredictTumor).count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 0.02, "{freq}");
    }
}
