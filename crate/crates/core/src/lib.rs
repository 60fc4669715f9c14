//! Deterministic evaluation engine for multi-mission tool-calling agents.
//!
//! Gold annotations describe each mission as a dependency graph of tool
//! invocations. The engine enumerates every serial/parallel execution plan
//! of that graph, arranges the plans in a prefix tree, and validates an
//! agent's turns against the tree as they arrive. Results roll up into
//! accuracy tables, optimal-path rate, accomplished progress, combination
//! coverage and an error taxonomy.

pub mod dataset;
pub mod matcher;
pub mod metrics;
pub mod model;
pub mod plan;
pub mod report;
pub mod runner;
pub mod tree;

pub use model::{ActionType, AgentAction, RelationType, TestCase, ToolCall, ToolSpec};
pub use plan::{enumerate_paths, optimal_step_count, partition_paths, DependencyGraph, ExecutionPath, PlanStep};
pub use tree::{build_tree, DecisionTree, MatchStatus};
