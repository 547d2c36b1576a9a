//! Behavioural pseudometrics between states of continuous-time Markov processes.
//!
//! Two transport-based fixpoint constructions are provided: one comparing the
//! one-dimensional marginals `P_t(x)` at every time ([`metrics::apply_f`]),
//! and one comparing whole trajectory laws under a discounted uniform cost
//! ([`metrics::apply_g`]). Two real-valued modal logics ([`logic`]) give
//! lower bounds for each, with witness formulas.
//!
//! Everything works on finite discretizations: states live on a finite grid
//! (or are the states of a finite chain), time is a finite rational grid and
//! trajectories are grid-sampled paths.

pub mod cli;
pub mod config;
pub mod discretize;
pub mod error;
pub mod logic;
pub mod metrics;
pub mod process;
pub mod rational;
pub mod report;
pub mod transport;
pub mod validate;

pub use error::{Error, Result};
pub use rational::Rational;
