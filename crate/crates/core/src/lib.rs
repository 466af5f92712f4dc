//! Gradient tree boosting for estimating individualized treatment rules.
//!
//! The crate is organized bottom-up:
//!
//! - [`data`]: trial datasets, CSV ingestion and fold assignment.
//! - [`boosting`]: a second-order exact-greedy tree booster.
//! - [`losses`]: gradient/hessian providers plugged into the booster.
//! - [`itr`]: the treatment-rule estimators built on top of the booster,
//!   plus the linear baselines and common-effect estimators.
//! - [`eval`]: value estimation, misclassification and Welch's t-test.
//! - [`sim`]: the five synthetic trial scenarios with their known optimal rules.
//! - [`tune`]: k-fold cross validation over hyperparameter grids.
//! - [`bench`]: the end-to-end simulation study runner.

// `!(a > b)` is used deliberately so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod boosting;
pub mod data;
pub mod error;
pub mod eval;
pub mod itr;
pub mod losses;
mod linalg;
pub mod sim;
pub mod tune;

pub use error::{Error, Result};

/// Treatment sign with the convention `sign(0) = +1`.
#[inline]
pub fn sign(value: f64) -> i8 {
    if value < 0.0 {
        -1
    } else {
        1
    }
}
