//! Metrics and Monte Carlo experiments.

pub mod experiments;
pub mod metrics;
pub mod output;
pub mod scenario;
pub mod tracking;
