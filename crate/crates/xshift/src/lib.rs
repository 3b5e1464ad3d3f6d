//! Explanation-space distribution shift detection.
//!
//! The crate trains simple regression models on synthetic tasks, computes
//! Shapley-value explanations under several value-function conventions, and
//! compares explanation distributions between a source sample and new data
//! to detect and quantify distribution shift that input-space monitoring
//! misses.

pub mod cli;
pub mod data;
pub mod error;
pub mod explain;
pub mod models;
pub mod monitor;
pub mod report;
pub mod rng;
pub mod stats;
pub mod synth;

pub use data::DataMatrix;
pub use error::{Error, Result};
