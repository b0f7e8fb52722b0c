//! Library surface of the experiment runner, used by the binary and the
//! acceptance suite.

pub mod artifacts;
pub mod config;
pub mod reproduce;
pub mod runner;
