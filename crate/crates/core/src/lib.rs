//! Probabilistic contrastive learning on the unit hypersphere.

pub mod cli;
pub mod config;
pub mod credible;
pub mod error;
pub mod genproc;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod quad;
pub mod rng;
pub mod special;
pub mod stats;
pub mod training;
pub mod vmf;

pub use error::{Error, Result};
