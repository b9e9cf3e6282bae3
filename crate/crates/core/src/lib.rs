//! Multiple imputation for continuous data via principal component models.

pub mod analysis;
pub mod data;
pub mod error;
pub mod impute;
pub mod pca;
pub mod rank;
pub mod sampler;
pub mod sim;
mod stats;

pub use data::{CompleteMatrix, IncompleteMatrix, MeansMatrix};
pub use error::Error;

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
