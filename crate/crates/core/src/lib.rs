//! Cross-composition disentangling adapters for compositional zero-shot
//! learning, built around a deterministic frozen pseudo-backbone.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense f64 matrices and a reverse-mode gradient tape,
//!   verified against central finite differences.
//! - [`dataset`]: a synthetic factorized attribute/object dataset with
//!   seen/unseen composition splits and a binary manifest format.
//! - [`graph`]: the attribute/object/composition graph and the primitive
//!   relevance matrices derived from seen compositions.
//! - [`sampler`]: auxiliary-composition selection (uniform, relevance-guided,
//!   and image-count-weighted strategies).
//! - [`backbone`]: frozen text/image transformer encoders with adapter
//!   insertion slots and trainable token embeddings.
//! - [`l_adapter`] / [`v_adapter`]: the graph-propagation language adapter
//!   and the cross-attention vision adapter.
//! - [`model`]: score/loss assembly and inference over candidate label sets.
//! - [`trainer`]: Adam training loop with frozen-parameter protection,
//!   checkpointing, and gradient verification.
//! - [`evaluator`]: seen/unseen bias-sweep metrics, open-world candidate
//!   filtering, and embedding export.
//!
//! Batch-level work (per-sample gradients, score-matrix rows) runs on rayon
//! when the `parallel` feature is enabled (default) and falls back to
//! sequential loops otherwise; results are bit-identical either way.

pub mod backbone;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod l_adapter;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod rng;
pub mod sampler;
pub mod trainer;
pub mod v_adapter;

pub use error::CoreError;
pub use numerics::{Matrix, Tape, Var};

/// Convenience result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;
