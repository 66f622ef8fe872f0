//! Cooperative stochastic approximation for expectation-constrained and
//! parameterized stochastic optimization.

pub mod baseline;
pub mod csa;
pub mod cspa;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod oracle;
pub mod problems;

pub use error::{Error, Result};
pub use geometry::ProxGeometry;
pub use oracle::{CoupledOracle, Oracle, SampleStream, SampleToken};
