use serde::{Deserialize, Serialize};

use crate::phantom::Label;

/// Class prediction made by the agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    PredictNormal = 0,
    PredictTumor = 1,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::PredictNormal, Action::PredictTumor];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        match i {
            0 => Action::PredictNormal,
            _ => Action::PredictTumor,
        }
    }

    pub fn predicted_label(self) -> Label {
        match self {
            Action::PredictNormal => Label::Normal,
            Action::PredictTumor => Label::Tumor,
        }
    }
}

/// `(image, pred_corr)`: which training image is shown and whether the
/// previous prediction on it was correct.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct State {
    pub image_index: usize,
    pub pred_corr: u8,
}

impl State {
    pub fn initial(image_index: usize) -> Self {
        Self { image_index, pred_corr: 0 }
    }
}

/// Kronecker delta of the predicted and true class.
pub fn kronecker_delta(action: Action, label: Label) -> u8 {
    u8::from(action.index() == label.as_index())
}

/// Returns `(reward, pred_corr_new)`: `(+1, 1)` for a correct prediction,
/// `(-1, 0)` otherwise.
pub fn env_step(label: Label, action: Action) -> (i8, u8) {
    let pred_corr = kronecker_delta(action, label);
    let reward = if pred_corr == 1 { 1 } else { -1 };
    (reward, pred_corr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rewards() {
        assert_eq!(env_step(Label::Tumor, Action::PredictTumor), (1, 1));
        assert_eq!(env_step(Label::Tumor, Action::PredictNormal), (-1, 0));
        assert_eq!(env_step(Label::Normal, Action::PredictNormal), (1, 1));
        assert_eq!(env_step(Label::Normal, Action::PredictTumor), (-1, 0));
    }

    #[test]
    fn correctness_table_is_kronecker_delta() {
        for label in [Label::Normal, Label::Tumor] {
            for action in Action::ALL {
                let correct = action.predicted_label() == label;
                let (_, pc) = env_step(label, action);
                assert_eq!(pc == 1, correct);
                assert_eq!(pc, kronecker_delta(action, label));
            }
        }
    }
}
