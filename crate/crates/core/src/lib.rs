//! Event knowledge graphs for coarse-instruction navigation.
//!
//! The crate builds a graph of subtask successions from task records,
//! retrieves similar subtasks and what followed them, feeds that knowledge to
//! a subtask planner, and executes the plan in a navigation-graph simulator
//! with a completion-signal driven backtracking controller.

pub mod backend;
pub mod embed;
pub mod extraction;
pub mod kg;
pub mod retrieval;
pub mod text;
pub mod action;
pub mod backtrack;
pub mod planner;
pub mod sim;
pub mod eval;
pub mod cli;
pub mod config;
