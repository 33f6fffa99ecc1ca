//! Weight-space baselines: the flattened parameter delta and a binary mask
//! over the most-updated parameters.

use thiserror::Error;

use crate::embed::{EmbeddingConfig, Method, ModelEmbedding};
use crate::toylm::ToyLmCheckpoint;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("salient fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
}

pub const DEFAULT_SALIENT_FRACTION: f64 = 0.01;

/// `θ_ft − θ_base`, tensor by tensor in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDelta {
    pub names: Vec<String>,
    pub flat: Vec<f32>,
}

fn check_arch(ft: &ToyLmCheckpoint, base: &ToyLmCheckpoint) -> Result<(), BaselineError> {
    if ft.config.same_architecture(&base.config) {
        Ok(())
    } else {
        Err(BaselineError::ArchitectureMismatch(format!(
            "{:?} vs {:?}",
            ft.config, base.config
        )))
    }
}

pub fn weight_delta(ft: &ToyLmCheckpoint, base: &ToyLmCheckpoint) -> Result<WeightDelta, BaselineError> {
    check_arch(ft, base)?;
    let names = ft.layout().tensors().iter().map(|t| t.name.clone()).collect();
    let flat = ft
        .params
        .iter()
        .zip(&base.params)
        .map(|(&a, &b)| ((a as f64) - (b as f64)) as f32)
        .collect();
    Ok(WeightDelta { names, flat })
}

pub fn flattened_weight_embedding(
    ft: &ToyLmCheckpoint,
    base: &ToyLmCheckpoint,
    model_id: &str,
    base_id: &str,
) -> Result<ModelEmbedding, BaselineError> {
    let delta = weight_delta(ft, base)?;
    Ok(ModelEmbedding::new(
        model_id,
        base_id,
        Method::FlattenedWeights,
        delta.flat,
        EmbeddingConfig::default(),
    ))
}

#[derive(Debug, Clone)]
pub struct SalientMask {
    pub embedding: ModelEmbedding,
    /// No parameter moved at all; the mask is all zeros.
    pub degenerate: bool,
}

/// Indices of the `⌈fraction·P⌉` largest nonzero `|delta|`, earlier index
/// first among equals.
pub fn salient_indices(delta: &[f32], fraction: f64) -> Result<Vec<usize>, BaselineError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(BaselineError::InvalidFraction(fraction));
    }
    let k = (fraction * delta.len() as f64).ceil() as usize;
    let mut nonzero: Vec<usize> = (0..delta.len()).filter(|&i| delta[i] != 0.0).collect();
    nonzero.sort_by(|&a, &b| delta[b].abs().total_cmp(&delta[a].abs()).then(a.cmp(&b)));
    nonzero.truncate(k);
    nonzero.sort_unstable();
    Ok(nonzero)
}

pub fn salient_mask_embedding(
    ft: &ToyLmCheckpoint,
    base: &ToyLmCheckpoint,
    fraction: f64,
    model_id: &str,
    base_id: &str,
) -> Result<SalientMask, BaselineError> {
    let delta = weight_delta(ft, base)?;
    let picks = salient_indices(&delta.flat, fraction)?;
    let mut mask = vec![0.0f32; delta.flat.len()];
    for &i in &picks {
        mask[i] = 1.0;
    }
    let degenerate = picks.is_empty();
    if degenerate {
        log::warn!("salient mask for {model_id}: no parameter differs from the base");
    }
    Ok(SalientMask {
        embedding: ModelEmbedding::new(model_id, base_id, Method::SalientMask, mask, EmbeddingConfig::default()),
        degenerate,
    })
}
