//! Library surface of the benchmark CLI, exposed so integration tests can
//! drive the commands without spawning processes.

pub mod commands;
pub mod csvio;
pub mod data;
pub mod svg;
