//! Monte Carlo estimation and closed-form bounds for the expected number of
//! level-set components of planar stationary Gaussian fields.

pub mod bounds;
pub mod closed_form;
pub mod degenerate;
pub mod error;
pub mod estimator;
pub mod quad;
pub mod sampler;
pub mod special;
pub mod spectral;
pub mod topology;

pub use error::{Error, Result};
