//! Model embeddings from activation shifts.
//!
//! A finetuned model is represented by how its internal representations move
//! away from its base model on a small fixed set of generic probe prompts.
//! This crate covers the whole loop:
//!
//! - [`probe`]: bundled probe sets, probe files and their canonical hash.
//! - [`ingest`]: the ACTV on-disk dump format produced by any model backend.
//! - [`embed`]: Delta Activations, Delta Logits and Delta Meaning embeddings.
//! - [`baselines`]: weight-space embeddings (flattened deltas, salient masks).
//! - [`registry`]: an append-only embedding store with ground-truth labels.
//! - [`analysis`]: cosine similarity, silhouette, additivity, retrieval, PCA.
//! - [`selection`]: model selection strategies for merging pipelines.
//! - [`toylm`]: a small byte-level decoder-only transformer used as a desk-scale
//!   stand-in for real backbones (train, sample, score, dump).
//! - [`pipeline`]: builds toy model pools end to end.
//! - [`cli`]: the `delta-embed` command line front end.

pub mod analysis;
pub mod baselines;
pub mod cli;
pub mod embed;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod probe;
pub mod registry;
pub mod rng;
pub mod selection;
pub mod toylm;

pub use embed::{EmbeddingConfig, LayerSelector, Method, ModelEmbedding, TokenSelector};
pub use error::{Error, Result};
pub use ingest::{ActivationDump, MeaningTrace, PromptRecord};
pub use probe::{ProbePrompt, ProbeSet};
pub use registry::Registry;
