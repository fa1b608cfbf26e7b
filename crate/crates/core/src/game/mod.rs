//! Cooperative games over a finite player set: Shapley values, pairwise
//! interactions, and multi-order interactions.

mod coalition;
mod contexts;
pub mod fixtures;
pub(crate) mod interaction;
mod set_function;

pub use coalition::{Coalition, MAX_PLAYERS};
pub use contexts::{sample_contexts, ContextDraw, SamplingMode};
pub use interaction::{
    decompose_check, delta_f, multi_order_exact, multi_order_sampled, pairwise_interaction_exact, shapley_exact,
    shapley_sampled, ExhaustiveLimits, MultiOrderEstimate, SampledShapley,
};
pub use set_function::{evaluate_all, CachedGame, EvalError, FnGame, SetFunction, DEFAULT_CACHE_CAPACITY};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("player count {n} outside 1..={max}")]
    PlayerCount { n: usize, max: usize },
    #[error("player {player} out of range for {n} players")]
    PlayerOutOfRange { player: usize, n: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("exhaustive budget exceeded: {what} needs {needed}, limit is {limit}")]
    BudgetExceeded { what: &'static str, needed: String, limit: u64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}
