//! A small byte-level decoder-only transformer.
//!
//! Pre-layer-norm blocks (causal multi-head attention + GELU MLP), learned
//! positions, untied output head. Tokens are raw bytes plus BOS and PAD, so a
//! model and its base always share a tokenizer. Weights are stored as f32;
//! all computation runs in f64.

mod checkpoint;
mod config;
mod corpus;
mod dump;
mod model;
mod ops;
mod sample;
mod train;

#[cfg(test)]
mod tests;

use std::path::PathBuf;

use thiserror::Error;

pub use checkpoint::{init_model, load_checkpoint, save_checkpoint, ToyLmCheckpoint, MODEL_FILE, TENSORS_FILE};
pub use config::{Layout, TensorKind, TensorSpec, ToyLmConfig, BOS, PAD, VOCAB_SIZE};
pub use corpus::{corpus, toy_corpus, Domain, Split};
pub use dump::{dump_activations, dump_models, meaning_trace, sample_probe_continuations, DumpPair, DumpSpec, MeaningSource};
pub use model::{probabilities, ForwardOutput, Model, Session, StepOutput};
pub use sample::{
    encode, encode_bytes, sample_continuations, sample_with, score_continuation, score_many, score_with,
    SamplingParams,
};
pub use train::{batch_loss, loss_and_grad, make_example, train, Schedule, TrainSpec, Trained, EOS_BYTE};

#[derive(Debug, Error)]
pub enum ToyLmError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("context overflow: {len} tokens exceeds max_context {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("invalid token id {0}")]
    InvalidToken(u16),
    #[error("empty input")]
    EmptyInput,
    #[error("layer {layer} out of range 0..={n_layers}")]
    LayerOutOfRange { layer: usize, n_layers: usize },
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("invalid training spec: {0}")]
    InvalidTrainSpec(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("invalid sampling request: {0}")]
    InvalidSampling(String),
    #[error("model and base architectures differ ({0}); activation capture needs identical shapes")]
    ConfigMismatch(String),
    #[error("unknown domain {0:?}")]
    UnknownDomain(String),
    #[error("split must be 1..=3, got {0}")]
    InvalidSplit(u8),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint format: {0}")]
    Format(String),
}

/// Convenience: forward pass on a checkpoint.
pub fn forward(ckpt: &ToyLmCheckpoint, tokens: &[u16], capture: &[usize]) -> Result<ForwardOutput, ToyLmError> {
    Model::new(ckpt).forward(tokens, capture)
}
