use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::baselines::BaselineError;
use crate::embed::EmbedError;
use crate::ingest::{IngestError, PairError};
use crate::probe::ProbeError;
use crate::registry::RegistryError;
use crate::selection::SelectionError;
use crate::toylm::ToyLmError;

/// Any error the toolkit can produce.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Pair(#[from] PairError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    ToyLm(#[from] ToyLmError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
