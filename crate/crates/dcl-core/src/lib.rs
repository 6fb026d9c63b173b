//! Decoupled contrastive learning toolkit.
//!
//! Evaluates the coupled (InfoNCE-style) contrastive objective, its decoupled
//! variants, and an alignment/uniformity form over batches of paired unit
//! embeddings, with fully analytic gradients, a finite-difference oracle, the
//! negative-positive coupling diagnostic, and a toy self-supervised training
//! harness (MLP encoder, synthetic clustered data, kNN evaluation).
//!
//! All operations are pure functions over immutable inputs and safe to call
//! concurrently; reductions run in fixed index order so results are
//! bit-stable across runs.

pub mod diagnostics;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod grad;
pub mod loss;
pub mod trainer;

pub use embedding::{
    normalize, similarity_table, AmbientViews, Anchor, EmbeddingBatch, SimilarityTable,
    UnitVector, View,
};
pub use error::{Error, Result};
pub use loss::{LossKind, LossReport, LossSpec, WeightKind};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
