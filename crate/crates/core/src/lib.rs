//! Cross-asset instantaneous correlation estimation for hybrid models built
//! from Gaussian short-rate components (G1, G2) and stochastic-volatility
//! equity components (Heston, Bates).
//!
//! The pipeline runs estimation of cross blocks from observed series, then
//! completion of unobserved variance correlations, then a PSD repair that
//! clamps and shrinks toward the block-diagonal target.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod completion;
pub mod error;
pub mod estimator;
pub mod io;
pub mod linalg;
pub mod psd;
pub mod simulator;
pub mod study;
pub mod types;

pub use error::{Error, Result};
