//! Exact structure learning for dynamic Bayesian networks.
//!
//! Recovers the intra-slice DAG `W` and inter-slice lag matrices
//! `A_1, ..., A_p` of a structural VAR from a multivariate time series by
//! solving a mixed-integer quadratic program to certified global optimality.
//! Acyclicity is enforced lazily: cycle-exclusion cuts are generated only
//! when a candidate solution actually contains a cycle, and the search is a
//! plain branch-and-bound over edge indicators with convex node relaxations
//! solved by coordinate descent with a rigorous dual bound.
//!
//! The crate also ships a synthetic-data generator, exhaustive oracle for
//! small instances, reconstruction metrics and a benchmark harness; the
//! companion CLI crate exposes all of it on the command line.

pub mod bench;
pub mod datagen;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod objective;
pub mod oracle;
pub mod relaxation;
pub mod solver;

pub use error::{Error, Result};
pub use graph::{find_cycles, is_acyclic, threshold, Cycle, DbnGraph, EdgeSupport};
