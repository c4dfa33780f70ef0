//! Reference planners the learned policy is compared against.

mod coverage;
mod mcts;
mod random;

pub use coverage::{coverage_sequence, CoveragePlanner};
pub use mcts::{mcts_plan, mcts_search, MctsConfig, SearchSummary};
pub use random::random_policy;
