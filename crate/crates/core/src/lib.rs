//! Counterfactual monotonic knowledge tracing.
//!
//! Students' practice logs are encoded into an evolving knowledge state,
//! mapped to per-concept mastery values, and trained to predict responses
//! while mastery after a correct answer is pushed above the mastery the
//! same student would have had after the flipped answer (and vice versa).

pub mod autodiff;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
