//! Metrics and the synthetic scene oracle.

pub mod metrics;
pub mod sim;
