//! Embedding-level knowledge retrieval, hierarchical sparse prompt coding and
//! zero-shot anomaly localization.
//!
//! All numerics run in `f64`; stored embeddings are `f32`.

pub mod embedding;
pub mod error;
pub mod eval;
pub mod expert;
pub mod pgm;
pub mod retrieval;
pub mod sparse;

pub use error::{Error, Result};
