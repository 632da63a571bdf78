//! Concept-enhanced vision-language alignment over precomputed embeddings:
//! dual-alignment training objectives with analytic gradients, dual-path
//! zero-shot inference, concept-based explainability, dictionary concept
//! extraction, and the evaluation statistics used to compare models.

pub mod ccem;
pub mod error;
pub mod explain;
pub mod extract;
pub mod gradcheck;
pub mod infer;
pub mod loss;
pub mod manifest;
pub mod metrics;
pub mod numerics;
pub mod synthetic;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use numerics::{Matrix, Vector};
pub use types::{AlignmentParams, ConceptSpan, ImageEmbedding, TextEmbedding, Triplet};
