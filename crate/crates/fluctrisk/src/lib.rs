//! Credit portfolio risk with fluctuating asset correlations.
//!
//! The engine combines a Merton-type structural default model with an
//! ensemble average over Wishart-distributed correlation matrices. The
//! correlation structure of the market is compressed into two parameters:
//! the average correlation level `c` and the fluctuation strength `N`.
//!
//! Modules:
//! - [`ensemble`]: ensemble-averaged return densities and the homogeneous
//!   correlation-matrix algebra,
//! - [`loss`]: analytic average loss densities (finite K and the K -> inf
//!   limit), closed-form moments and density-based VaR/ETL,
//! - [`mcsim`]: Monte-Carlo simulation of correlated fluctuating asset
//!   values, empirical loss samples and deviation reports,
//! - [`market`]: the calibration pipeline from price panels to the model
//!   parameters (c, N),
//! - [`pipeline`]: end-to-end runs wired together for the CLI.

pub mod ensemble;
pub mod error;
pub mod loss;
pub mod market;
pub mod mcsim;
pub mod pipeline;
pub mod quadrature;
pub mod special;

pub use error::{Error, Result};
