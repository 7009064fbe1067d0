//! Parallel-in-time Bayesian filtering and smoothing via associative scans.
//!
//! The crate provides exact parallel Kalman filtering and Rauch-Tung-Striebel
//! smoothing for linear-Gaussian state-space models, a finite-state (HMM)
//! instantiation of the same operator algebra for oracle validation, and a
//! deterministic flop-cost model that supports span/work comparisons between
//! the sequential and parallel algorithms.

pub mod acceptance;
pub mod bench;
pub mod error;
pub mod hmm;
pub mod kernel;
pub mod pkf;
pub mod prts;
pub mod scan;
pub mod sequential;
pub mod ssm;

pub use error::{Error, Result};
