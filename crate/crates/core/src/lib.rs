//! Semantic drift measurement for unified vision-language models.
//!
//! Chains alternate text-to-image and image-to-text calls against a model
//! backend; every artifact is stored with its digest. The metrics modules turn
//! stored chains into similarity series, mean cumulative drift, power-law
//! decay fits and multi-generation compositional scores.

pub mod backend;
pub mod canonical;
pub mod chain;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod par;
pub mod seed;

pub use error::{Error, Result};
