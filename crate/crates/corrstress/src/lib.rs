//! Correlation stress testing for multi-asset portfolios.
//!
//! The crate parameterises asset-return correlation matrices through
//! per-factor "distances" between instruments, calibrates the factor
//! coefficients from historical return panels, and computes
//! variance-covariance value-at-risk under given, conditional, worst-case
//! (Mahalanobis-constrained) and joint correlation + volatility stress
//! scenarios. Credit-derivative utilities convert index/tranche quotes
//! into the spread-return panels and portfolio weights the risk engine
//! consumes, and a batch pipeline ties everything together behind the
//! `corrstress` command-line tool.

// Validation guards are written as `!(x > bound)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod credit;
pub mod error;
pub mod factor_model;
pub mod homogeneous;
pub mod numerics;
pub mod pipeline;
pub mod portfolio_risk;
pub mod scenario;

pub use error::{Error, Result};
