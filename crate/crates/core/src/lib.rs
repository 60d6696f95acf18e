//! Sparse, interpretable political-bias embeddings.
//!
//! The pipeline mines controversial topics from a corpus whose articles carry
//! only outlet-level bias ratings, trains an alignment scorer on weak labels
//! derived from those ratings, and represents each article as a sparse vector
//! over topics: each active dimension says how far the article leans toward
//! that topic's right indicator versus its left one.
//!
//! Stages, in order:
//!
//! 1. [`corpus`]: load and split weakly labeled corpora.
//! 2. [`encoder`]: text encoders behind [`encoder::EncoderProvider`].
//! 3. [`topic_mining`]: k-means, bias dispersion, topic/indicator extraction.
//! 4. [`topic_index`]: importance scoring and top-m topic retrieval.
//! 5. [`cross_encoder`]: weak labels and the alignment scorer.
//! 6. [`embedding`]: sparse bias embeddings.
//! 7. [`retrieval`] and [`eval`]: diversified retrieval and classification.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod cross_encoder;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod retrieval;
pub mod synthetic;
pub mod topic_index;
pub mod topic_mining;

pub use error::{Error, Result};
