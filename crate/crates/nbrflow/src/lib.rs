//! Neighbor-conditioned normalizing flows: density estimation where a
//! normalizing flow is conditioned on a local neighborhood of the query
//! point, generalizing kernel density estimation to learned, data-dependent
//! kernels.

pub mod autodiff;
pub mod cli;
pub mod conditioning;
pub mod data;
pub mod error;
pub mod estimators;
pub mod flow;
pub mod metrics;
pub mod neighbors;
pub mod svg;
pub mod testutil;
pub mod train;

pub use error::{Error, Result};
