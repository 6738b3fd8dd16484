//! Optimization-trajectory diagnostics.
//!
//! Trains small models with gradient descent, momentum or AdamW (optionally
//! with random scaling of each update) and measures along the way how well
//! convexity- and smoothness-based reasoning describes the trajectory:
//! convexity gaps, instantaneous and maximum smoothness, the convexity
//! ratio, update correlations and a power-iteration sharpness oracle.

pub mod analytic;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod num;
pub mod optim;
pub mod rng;
pub mod sharpness;
pub mod tasks;

pub use error::{Error, Result};
pub use num::{inner_product, norm, Norm, Objective, ParamVector};
