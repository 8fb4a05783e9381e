//! Skill DSL parsing, dependency-graph scoring, and automated trajectory
//! generation for language-conditioned manipulation benchmarks.

pub mod dsl;
pub mod episode;
pub mod geometry;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod planner;
pub mod scenario;
