//! Regression Monte Carlo solver for finite-horizon robust impulse control of
//! path-dependent SDEs.
//!
//! The value of the game is computed as the limit of an iterated sequence of
//! reflected BSDEs: level `k` is the value when at most `k` interventions
//! remain, and its reflecting barrier is the level `k - 1` value evaluated at
//! the post-impulse state minus the intervention cost. The driver of every
//! level is the minimized Hamiltonian, which encodes an adversary choosing the
//! worst-case continuous control.
//!
//! Module map:
//!
//! - [`grid`], [`paths`]: time discretization, simulated path batches and the
//!   impulse-control calculus (concatenation, truncation, distance).
//! - [`problem`]: problem instances and the built-in test problems.
//! - [`simulate`]: Euler–Maruyama forward simulation (driftless and
//!   drift-injected).
//! - [`hamiltonian`]: pointwise Hamiltonian and its exact minimization over a
//!   finite action grid.
//! - [`regression`]: featurizers, local polynomial bases and ridge least
//!   squares.
//! - [`rbsde`]: one backward pass for a (reflected) BSDE.
//! - [`solver`]: Picard iteration over intervention budgets, strategy
//!   extraction and dual checks.
//! - [`tree`]: exact robust impulse dynamic programming on a binomial lattice.
//! - [`evaluator`], [`policy`]: policy objects and reward estimation.
//! - [`config`], [`report`], [`harness`]: configuration-driven runs.

// `!(x > 0.0)` deliberately rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod evaluator;
pub mod grid;
pub mod hamiltonian;
pub mod harness;
pub mod paths;
pub mod policy;
pub mod problem;
pub mod rbsde;
pub mod regression;
pub mod report;
pub mod rng;
pub mod simulate;
pub mod solver;
pub mod tree;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use paths::{concat, control_distance, truncate, ControlDistance, ImpulseSequence, PathBatch, PathPrefix};
pub use problem::ProblemSpec;
