//! Coarse-to-fine multimodal retrieval for knowledge-based visual question
//! answering.
//!
//! The engine narrows a knowledge base in three steps:
//!
//! 1. **Entity search**: the query image is embedded and matched against
//!    embedded entity summaries with exact inner-product search
//!    ([`index::VectorIndex`]).
//! 2. **Fused reranking**: each of the top-k entities is scored section by
//!    section with late-interaction MaxSim over 32-row fused image+text token
//!    matrices, and the best section score is blended with the stage-1 score
//!    ([`pipeline::rerank_entities`]).
//! 3. **Section selection**: the sections of the winning entity are scored
//!    by a text reranker and blended with the stage-2 section scores
//!    ([`pipeline::select_section`]); the winning section becomes the
//!    generator's context.
//!
//! All learned components sit behind the [`provider::Provider`] trait. The
//! [`provider::DeterministicProvider`] is a pure, seedable stand-in used for
//! tests and planted benchmarks; [`provider::HttpProvider`] talks to a model
//! service over the JSON wire protocol in [`provider::wire`].
//!
//! Data-parallel loops (index scans, batched MaxSim, per-sample pipeline
//! runs) use rayon when the `parallel` feature is enabled (the default) and
//! fall back to plain iterators otherwise. See [`par::Exec`].

pub mod corpus;
pub mod eval;
pub mod index;
pub mod jsonl;
pub mod par;
pub mod pipeline;
pub mod provider;
pub mod reranker;
pub mod synthetic;

pub use corpus::{Corpus, EntityRecord, ImageRef, QuerySample, SectionRecord};
pub use index::{SearchHit, VectorIndex};
pub use pipeline::PipelineConfig;
pub use provider::{DenseVector, Provider, TokenMatrix};

/// Engine version embedded in every output artifact.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
