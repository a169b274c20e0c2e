//! Embedding matrices, knowledge indexes, centroid stores and prompt templates.

pub mod centroid;
pub mod index;
pub mod matrix;
pub mod prompt;

pub use centroid::{nearest_centroid, CentroidStore};
pub use index::{build_index, KnowledgeDocument, KnowledgeIndex};
pub use matrix::{cosine, EmbeddingMatrix};
pub use prompt::{instantiate_prompts, PromptPair, PromptTemplates};
