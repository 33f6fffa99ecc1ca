//! Delta embeddings computed from dump pairs.
//!
//! All three Delta-X variants share one shape: pick a feature vector per probe
//! prompt from the finetuned model and from its base, subtract, and average the
//! differences over the probe set.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{validate_pair, ActivationDump, Matrix, MeaningTrace, PairError};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error(transparent)]
    Pair(#[from] PairError),
    #[error("layer {layer} out of range 1..={num_layers}")]
    LayerOutOfRange { layer: usize, num_layers: usize },
    #[error("layer {layer} was not captured in dump {model_id:?} (captured: {captured:?})")]
    LayerNotCaptured {
        layer: usize,
        model_id: String,
        captured: Vec<usize>,
    },
    #[error("dump {0:?} carries no logits")]
    LogitsAbsent(String),
    #[error("dump {0:?} carries no meaning trace")]
    MeaningAbsent(String),
    #[error("meaning trace is empty")]
    EmptyMeaning,
    #[error("continuation mismatch at prompt {prompt_id}, index {index}")]
    ContinuationMismatch { prompt_id: usize, index: usize },
    #[error("meaning trace has {found} continuations for prompt {prompt_id}, expected {expected}")]
    RaggedMeaning {
        prompt_id: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown {kind} {value:?}")]
    Parse { kind: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DeltaActivations,
    DeltaLogits,
    DeltaMeaning,
    FlattenedWeights,
    SalientMask,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::DeltaActivations => "delta_activations",
            Method::DeltaLogits => "delta_logits",
            Method::DeltaMeaning => "delta_meaning",
            Method::FlattenedWeights => "flattened_weights",
            Method::SalientMask => "salient_mask",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = EmbedError;

    /// Accepts the canonical snake_case names and the short CLI spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "delta_activations" | "delta-act" | "delta-activations" => Method::DeltaActivations,
            "delta_logits" | "delta-logits" => Method::DeltaLogits,
            "delta_meaning" | "delta-meaning" => Method::DeltaMeaning,
            "flattened_weights" | "flat-weights" | "flattened-weights" => Method::FlattenedWeights,
            "salient_mask" | "salient-mask" => Method::SalientMask,
            _ => {
                return Err(EmbedError::Parse {
                    kind: "method",
                    value: s.to_owned(),
                })
            }
        })
    }
}

/// Which token position of a prompt supplies the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSelector {
    First,
    /// Token ⌈T/2⌉ (1-based).
    Mid,
    Last,
    /// Position-weighted mean, weight t / Σk for token t.
    Weighted,
}

impl fmt::Display for TokenSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenSelector::First => "first",
            TokenSelector::Mid => "mid",
            TokenSelector::Last => "last",
            TokenSelector::Weighted => "weighted",
        })
    }
}

impl FromStr for TokenSelector {
    type Err = EmbedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "first" => TokenSelector::First,
            "mid" => TokenSelector::Mid,
            "last" => TokenSelector::Last,
            "weighted" => TokenSelector::Weighted,
            _ => {
                return Err(EmbedError::Parse {
                    kind: "token selector",
                    value: s.to_owned(),
                })
            }
        })
    }
}

/// Which transformer block supplies the hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LayerSelector {
    Shallow,
    Mid,
    Deep,
    Last,
    Explicit(usize),
}

impl fmt::Display for LayerSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSelector::Shallow => f.write_str("shallow"),
            LayerSelector::Mid => f.write_str("mid"),
            LayerSelector::Deep => f.write_str("deep"),
            LayerSelector::Last => f.write_str("last"),
            LayerSelector::Explicit(l) => write!(f, "explicit:{l}"),
        }
    }
}

impl FromStr for LayerSelector {
    type Err = EmbedError;

    /// `shallow|mid|deep|last`, `explicit:N`, or a bare layer number.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_err = || EmbedError::Parse {
            kind: "layer selector",
            value: s.to_owned(),
        };
        Ok(match s {
            "shallow" => LayerSelector::Shallow,
            "mid" => LayerSelector::Mid,
            "deep" => LayerSelector::Deep,
            "last" => LayerSelector::Last,
            other => {
                let n = other.strip_prefix("explicit:").unwrap_or(other);
                LayerSelector::Explicit(n.parse().map_err(|_| parse_err())?)
            }
        })
    }
}

impl From<LayerSelector> for String {
    fn from(l: LayerSelector) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for LayerSelector {
    type Error = EmbedError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Settings an embedding was computed under. Embeddings are only comparable
/// within one `(method, config)` cohort.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_mode: Option<TokenSelector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_mode: Option<LayerSelector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_meaning: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEmbedding {
    pub model_id: String,
    pub base_model_id: String,
    pub method: Method,
    pub vector: Vec<f32>,
    pub config: EmbeddingConfig,
    pub created_at: DateTime<Utc>,
}

impl ModelEmbedding {
    pub fn new(
        model_id: impl Into<String>,
        base_model_id: impl Into<String>,
        method: Method,
        vector: Vec<f32>,
        config: EmbeddingConfig,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            base_model_id: base_model_id.into(),
            method,
            vector,
            config,
            created_at: Utc::now(),
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn is_zero(&self) -> bool {
        self.vector.iter().all(|&x| x == 0.0)
    }
}

/// Feature vector of one prompt under `sel`, in f64.
pub fn token_select(hidden: &Matrix, sel: TokenSelector) -> Vec<f64> {
    let t = hidden.rows();
    assert!(t >= 1, "token_select on an empty matrix");
    let row = |r: usize| hidden.row(r).iter().map(|&x| x as f64).collect::<Vec<f64>>();
    match sel {
        TokenSelector::First => row(0),
        TokenSelector::Mid => row(t.div_ceil(2) - 1),
        TokenSelector::Last => row(t - 1),
        TokenSelector::Weighted => {
            let total = (t * (t + 1) / 2) as f64;
            let mut out = vec![0.0; hidden.cols()];
            for r in 0..t {
                let w = (r + 1) as f64 / total;
                for (o, &x) in out.iter_mut().zip(hidden.row(r)) {
                    *o += w * x as f64;
                }
            }
            out
        }
    }
}

/// Maps a selector onto a 1-based block index for a model with `num_layers` blocks.
pub fn resolve_layer(sel: LayerSelector, num_layers: usize) -> Result<usize, EmbedError> {
    assert!(num_layers >= 1, "resolve_layer needs at least one layer");
    let l = num_layers;
    Ok(match sel {
        LayerSelector::Shallow => (l / 3).max(1),
        LayerSelector::Mid => (l / 2).max(1),
        LayerSelector::Deep => (2 * l / 3).max(1),
        LayerSelector::Last => l,
        LayerSelector::Explicit(x) => {
            if x > l {
                return Err(EmbedError::LayerOutOfRange {
                    layer: x,
                    num_layers: l,
                });
            }
            x
        }
    })
}

fn mean_of_deltas(
    pairs: impl Iterator<Item = (Vec<f64>, Vec<f64>)>,
    dim: usize,
) -> Vec<f32> {
    let mut acc = vec![0.0f64; dim];
    let mut n = 0usize;
    for (ft, base) in pairs {
        for ((a, f), b) in acc.iter_mut().zip(&ft).zip(&base) {
            *a += f - b;
        }
        n += 1;
    }
    acc.iter().map(|a| (a / n as f64) as f32).collect()
}

fn captured(dump: &ActivationDump, layer: usize) -> Result<(), EmbedError> {
    if dump.layer_indices.contains(&layer) {
        Ok(())
    } else {
        Err(EmbedError::LayerNotCaptured {
            layer,
            model_id: dump.model_id.clone(),
            captured: dump.layer_indices.clone(),
        })
    }
}

/// Mean over probe prompts of `h_ft - h_base` at the selected token and layer.
pub fn delta_activations(
    ft: &ActivationDump,
    base: &ActivationDump,
    token: TokenSelector,
    layer: LayerSelector,
) -> Result<ModelEmbedding, EmbedError> {
    validate_pair(ft, base)?;
    let l = resolve_layer(layer, ft.num_layers)?;
    captured(ft, l)?;
    captured(base, l)?;
    let vector = mean_of_deltas(
        ft.records.iter().zip(&base.records).map(|(a, b)| {
            (token_select(&a.hidden[&l], token), token_select(&b.hidden[&l], token))
        }),
        ft.hidden_dim,
    );
    Ok(ModelEmbedding::new(
        &ft.model_id,
        &ft.base_model_id,
        Method::DeltaActivations,
        vector,
        EmbeddingConfig {
            probe_hash: Some(ft.probe_hash.clone()),
            token_mode: Some(token),
            layer_mode: Some(layer),
            n_meaning: None,
        },
    ))
}

/// Same aggregation as [`delta_activations`] over output logits.
pub fn delta_logits(
    ft: &ActivationDump,
    base: &ActivationDump,
    token: TokenSelector,
) -> Result<ModelEmbedding, EmbedError> {
    validate_pair(ft, base)?;
    for d in [ft, base] {
        if !d.has_logits() {
            return Err(EmbedError::LogitsAbsent(d.model_id.clone()));
        }
    }
    if ft.vocab_size != base.vocab_size {
        return Err(PairError::DimMismatch {
            ft_layers: ft.num_layers,
            ft_dim: ft.vocab_size,
            base_layers: base.num_layers,
            base_dim: base.vocab_size,
        }
        .into());
    }
    let vector = mean_of_deltas(
        ft.records.iter().zip(&base.records).map(|(a, b)| {
            let la = a.logits.as_ref().expect("checked has_logits");
            let lb = b.logits.as_ref().expect("checked has_logits");
            (token_select(la, token), token_select(lb, token))
        }),
        ft.vocab_size,
    );
    Ok(ModelEmbedding::new(
        &ft.model_id,
        &ft.base_model_id,
        Method::DeltaLogits,
        vector,
        EmbeddingConfig {
            probe_hash: Some(ft.probe_hash.clone()),
            token_mode: Some(token),
            layer_mode: None,
            n_meaning: None,
        },
    ))
}

/// Difference of inverse perplexities `exp(mean log p)` per continuation,
/// averaged over probe prompts. Output length is the per-prompt count `n`.
pub fn meaning_delta(ft: &MeaningTrace, base: &MeaningTrace) -> Result<Vec<f32>, EmbedError> {
    if ft.is_empty() || base.is_empty() {
        return Err(EmbedError::EmptyMeaning);
    }
    if ft.continuations.len() != base.continuations.len() {
        let i = ft.continuations.len().min(base.continuations.len());
        let prompt_id = ft.continuations.get(i).or(base.continuations.get(i)).map_or(0, |c| c.prompt_id);
        return Err(EmbedError::ContinuationMismatch { prompt_id, index: i });
    }
    let ft_groups = ft.by_prompt();
    let base_groups = base.by_prompt();
    let n = ft_groups.values().next().map_or(0, Vec::len);
    let mut acc = vec![0.0f64; n];
    for ((&pid, fg), (&bpid, bg)) in ft_groups.iter().zip(&base_groups) {
        if pid != bpid || fg.len() != bg.len() {
            return Err(EmbedError::ContinuationMismatch {
                prompt_id: pid.min(bpid),
                index: 0,
            });
        }
        if fg.len() != n {
            return Err(EmbedError::RaggedMeaning {
                prompt_id: pid,
                expected: n,
                found: fg.len(),
            });
        }
        for (i, ((fc, flp), (bc, blp))) in fg.iter().zip(bg).enumerate() {
            if fc != bc {
                return Err(EmbedError::ContinuationMismatch { prompt_id: pid, index: i });
            }
            acc[i] += flp.exp() - blp.exp();
        }
    }
    let prompts = ft_groups.len() as f64;
    Ok(acc.iter().map(|a| (a / prompts) as f32).collect())
}

/// Delta Meaning between two dumps. Only the probe hash and lineage must
/// agree: hidden sizes and depths may differ, which is the point.
pub fn delta_meaning(
    ft: &ActivationDump,
    base: &ActivationDump,
) -> Result<ModelEmbedding, EmbedError> {
    if ft.probe_hash != base.probe_hash {
        return Err(PairError::ProbeMismatch {
            ft: ft.probe_hash.clone(),
            base: base.probe_hash.clone(),
        }
        .into());
    }
    if ft.base_model_id != base.model_id {
        return Err(PairError::LineageMismatch {
            declared: ft.base_model_id.clone(),
            actual: base.model_id.clone(),
        }
        .into());
    }
    let ft_trace = ft
        .meaning
        .as_ref()
        .ok_or_else(|| EmbedError::MeaningAbsent(ft.model_id.clone()))?;
    let base_trace = base
        .meaning
        .as_ref()
        .ok_or_else(|| EmbedError::MeaningAbsent(base.model_id.clone()))?;
    let vector = meaning_delta(ft_trace, base_trace)?;
    let n = vector.len();
    Ok(ModelEmbedding::new(
        &ft.model_id,
        &ft.base_model_id,
        Method::DeltaMeaning,
        vector,
        EmbeddingConfig {
            probe_hash: Some(ft.probe_hash.clone()),
            token_mode: None,
            layer_mode: None,
            n_meaning: Some(n),
        },
    ))
}
