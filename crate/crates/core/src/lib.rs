//! Synthesis of geographically grounded, OPF-feasible power grid test cases.

pub mod assignment;
pub mod case;
pub mod config;
pub mod error;
pub mod fixture;
pub mod geodata;
pub mod lineparams;
pub mod metrics;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod powerflow;
pub mod reactive;
pub mod scenarios;
pub mod sizing;
pub mod topology;

pub use error::{GridError, Result};
