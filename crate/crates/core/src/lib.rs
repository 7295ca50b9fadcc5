//! Bilinear label-embedding classification.
//!
//! Classes are embedded as columns of an E x C matrix built from side
//! information (attribute tables, class taxonomies, external word
//! vectors) or from data-independent codes (one-vs-rest, Gaussian,
//! Hadamard). A D x E matrix W scores a sample against a class as
//! `theta(x)' W phi(y)`, and prediction is the best-scoring class. W is
//! learned by sampled-negative ranking SGD, a structured hinge, or ridge
//! regression; with labeled data for the target classes the embedding
//! itself can be learned, optionally anchored to its side-information
//! prior. Because unseen classes still have embedding columns, the same
//! model covers zero-shot, few-shot and full-data training. A
//! per-attribute probabilistic baseline (independent logistic classifiers
//! combined into class posteriors) is included for comparison.

pub mod compat;
pub mod dap;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod train;
mod util;

pub use compat::{CompatModel, ScoreVector};
pub use dap::AttributeClassifierBank;
pub use dataset::{AttributeTable, FeatureSet, Split, SplitSpec, TaxonomyTree};
pub use embedding::{ClassEmbedding, EmbeddingRecipe, Encoding, EmbeddingSource, ThresholdPolicy};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use train::{LossWeights, RankingConfig, TrainReport};
pub use util::seeded_rng;
