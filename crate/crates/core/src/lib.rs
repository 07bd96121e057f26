//! Tree-of-thought search that merges semantically redundant sibling steps
//! while the tree grows.
//!
//! The engine ([`search::run_search`]) selects frontier nodes by UCB,
//! expands them in parallel through pluggable [`backends`], clusters each
//! new sibling set by cosine similarity and keeps one representative per
//! cluster. [`baselines`] provides the comparison strategies and
//! [`harness`] runs seeded experiments over the synthetic benchmark.

pub mod backends;
pub mod baselines;
pub mod config;
pub mod error;
pub mod harness;
pub mod merge;
pub mod policy;
pub mod search;
pub mod seed;
pub mod trace;
pub mod tree;

pub use baselines::{run_strategy, StrategyId};
pub use config::{ClockMode, Config, MergeMode};
pub use error::{BackendError, Error, Result};
pub use search::{run_search, RunMetrics, SearchOutcome};
pub use tree::{NodeId, NodeState, SearchNode, SearchTree};
