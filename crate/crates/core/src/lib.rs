//! Conditional flow matching for text-conditioned motion generation.

pub mod cfm;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod motion_data;
pub mod predictor;
pub mod rng;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
