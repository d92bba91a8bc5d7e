//! CPU ray tracing of 3D Gaussian scenes with monolithic, two-level and
//! checkpoint-replay traversal, plus traversal instrumentation.

pub mod accel;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod traversal;

pub use error::{Error, Result};
