//! Sub-word compositional skip-gram embeddings and a convolutional CRF
//! tagger for comparing them on sequence labeling tasks.
//!
//! The numeric core is generic over [`Real`]; the aliases below fix the
//! scalar for the common cases.

pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod num;
pub mod subword;
pub mod tagger;
pub mod trainer;

pub use error::{Error, Result};
pub use num::Real;

/// Single-precision embedding model, the on-disk precision.
pub type EmbeddingModelF32 = trainer::EmbeddingModel<f32>;
/// Double-precision embedding model, used by gradient checks.
pub type EmbeddingModelF64 = trainer::EmbeddingModel<f64>;
pub type WordVectorsF32 = embeddings::WordVectorStore<f32>;
pub type WordVectorsF64 = embeddings::WordVectorStore<f64>;
pub type TaggerModelF32 = tagger::TaggerModel<f32>;
pub type TaggerModelF64 = tagger::TaggerModel<f64>;
