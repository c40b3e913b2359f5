//! Q-learning on the five-step classification MDP.

mod buffer;
mod env;
mod policy;
mod schedule;
mod td;
mod trainer;

pub use buffer::{ReplayBuffer, Transition, REPLAY_CAPACITY};
pub use env::{env_step, kronecker_delta, Action, State};
pub use policy::{greedy, select_action};
pub use schedule::{epsilon_value, EpsilonSchedule};
pub use td::{bootstrap_target, optimal_value, td_target, QLearningSpec, TabularQ};
pub use trainer::{
    evaluate_testset, metrics_csv, parse_metrics_csv, run_episode, train_rl, train_rl_with, write_metrics_csv,
    DqnLearner, EpisodeLog, MetricsRow, OracleQ, QFunction, QLearner, RlOutcome,
    METRICS_HEADER,
};
