//! Parametric maximum-likelihood channel estimation for links assisted by a
//! reconfigurable intelligent surface (RIS): array models, the spatial
//! spectrum estimator, adaptive pilot configuration, codebooks, wide-beam
//! initialization, baselines and a Monte Carlo harness.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod baselines;
pub mod channels;
pub mod codebook;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod simulator;
pub mod widebeam;

pub use error::{Error, Result};
pub use geometry::{ArrayGeometry, CMatrix, CVector, ChannelPoint};
pub use simulator::scenario::Scenario;
