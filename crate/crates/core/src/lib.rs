//! Locally stationary graph processes.
//!
//! A locally stationary graph process is a sum of `K` stationary component
//! processes, each gated per vertex by a membership function. This crate
//! provides the model itself, learning from (partially observed)
//! realizations, LMMSE interpolation, covariance-driven partitioning with
//! per-subgraph stationary approximation, checkers for the covariance bounds
//! of the model, and the synthetic generators and metrics used to evaluate
//! all of the above.

pub mod bounds;
pub mod error;
pub mod estimation;
pub mod eval;
pub mod graph;
pub mod io;
pub mod learner;
pub mod linalg;
pub mod model;
pub mod partition;

pub use error::{Error, Result};
pub use graph::{Graph, Spectrum};
pub use model::{LsgpModel, RealizationSet};
pub use partition::Partition;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
