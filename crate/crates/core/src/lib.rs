//! Combining the statistics of a group sequential trial into a new statistic
//! with independent increments, survival test families built on top of that,
//! sequential boundaries, and a Monte Carlo harness.

pub mod boundaries;
pub mod cli;
pub mod error;
pub mod indinc;
pub mod matrix;
pub mod mcsim;
pub mod normal;
pub mod rmst;
pub mod stream;
pub mod survdata;
pub mod wilcoxon;

pub use error::{Error, Result};
