//! ACTV dumps from a toy model and its base.

use super::checkpoint::ToyLmCheckpoint;
use super::model::Model;
use super::sample::{encode, sample_with, score_many, SamplingParams};
use super::ToyLmError;
use crate::ingest::{ActivationDump, Continuation, MeaningTrace, PromptRecord};
use crate::probe::ProbeSet;
use crate::rng::SplitMix64;

/// Where Delta Meaning continuations come from.
#[derive(Debug, Clone)]
pub enum MeaningSource {
    /// Sample from the base model of the pair.
    SampleBase(SamplingParams),
    /// Score a fixed list, e.g. continuations sampled once from a reference
    /// base so models of different architectures share one meaning space.
    Fixed(Vec<Continuation>),
}

#[derive(Debug, Clone)]
pub struct DumpSpec {
    pub model_id: String,
    pub base_id: String,
    /// Blocks to capture (0 = embedding output).
    pub layers: Vec<usize>,
    pub with_logits: bool,
    pub meaning: Option<MeaningSource>,
}

impl DumpSpec {
    /// Capture every block, no logits, no meaning trace.
    pub fn all_layers(model_id: impl Into<String>, base_id: impl Into<String>, n_layers: usize) -> Self {
        Self {
            model_id: model_id.into(),
            base_id: base_id.into(),
            layers: (1..=n_layers).collect(),
            with_logits: false,
            meaning: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DumpPair {
    pub model: ActivationDump,
    pub base: ActivationDump,
    /// Truncations and refused captures.
    pub warnings: Vec<String>,
}

/// Probe prompt tokens, cut to `limit` with a warning.
fn probe_tokens(text: &str, limit: usize, id: usize, warnings: &mut Vec<String>) -> Vec<u16> {
    let mut tokens = encode(text);
    if tokens.len() > limit {
        warnings.push(format!(
            "probe prompt {id}: {} tokens truncated to {limit}",
            tokens.len()
        ));
        tokens.truncate(limit);
    }
    tokens
}

/// Bytes of prompt `text` that fit alongside a continuation of `cont_len` tokens.
fn prompt_prefix(text: &str, max_context: usize, cont_len: usize) -> &[u8] {
    let room = max_context.saturating_sub(cont_len + 1);
    let bytes = text.as_bytes();
    &bytes[..bytes.len().min(room)]
}

pub fn sample_probe_continuations(
    base: &Model,
    probe: &ProbeSet,
    params: &SamplingParams,
) -> Result<Vec<Continuation>, ToyLmError> {
    let mut rng = SplitMix64::new(params.seed);
    let mut out = Vec::with_capacity(probe.len() * params.n);
    for p in probe.prompts() {
        let prefix = prompt_prefix(&p.text, base.cfg.max_context, params.max_new_tokens);
        let per_prompt = SamplingParams {
            seed: rng.next_u64(),
            ..*params
        };
        for bytes in sample_with(base, prefix, &per_prompt)? {
            out.push(Continuation {
                prompt_id: p.id,
                num_tokens: bytes.len(),
                text: String::from_utf8(bytes).expect("sampling emits ASCII only"),
            });
        }
    }
    Ok(out)
}

/// Mean log-probabilities of `continuations` under `model`.
pub fn meaning_trace(
    model: &Model,
    probe: &ProbeSet,
    continuations: &[Continuation],
) -> Result<MeaningTrace, ToyLmError> {
    let mut mean_logprobs = Vec::with_capacity(continuations.len());
    for p in probe.prompts() {
        let group: Vec<&Continuation> = continuations.iter().filter(|c| c.prompt_id == p.id).collect();
        if group.is_empty() {
            continue;
        }
        let longest = group.iter().map(|c| c.text.len()).max().unwrap_or(0);
        let prefix = prompt_prefix(&p.text, model.cfg.max_context, longest);
        let texts: Vec<&[u8]> = group.iter().map(|c| c.text.as_bytes()).collect();
        mean_logprobs.extend(score_many(model, prefix, &texts)?);
    }
    // Keep the caller's order: regroup scores by position.
    let mut ordered: Vec<&Continuation> = Vec::with_capacity(continuations.len());
    for p in probe.prompts() {
        ordered.extend(continuations.iter().filter(|c| c.prompt_id == p.id));
    }
    if ordered.len() != continuations.len() {
        return Err(ToyLmError::InvalidSampling(
            "continuation refers to a prompt outside the probe set".into(),
        ));
    }
    Ok(MeaningTrace {
        continuations: ordered.into_iter().cloned().collect(),
        mean_logprobs,
    })
}

fn activation_dump(
    model: &Model,
    model_id: &str,
    base_id: &str,
    probe: &ProbeSet,
    layers: &[usize],
    with_logits: bool,
    warnings: &mut Vec<String>,
) -> Result<ActivationDump, ToyLmError> {
    let cfg = &model.cfg;
    let mut records = Vec::with_capacity(probe.len());
    for p in probe.prompts() {
        let tokens = probe_tokens(&p.text, cfg.max_context, p.id, warnings);
        let num_tokens = tokens.len();
        let (hidden, logits) = if layers.is_empty() && !with_logits {
            (Default::default(), None)
        } else {
            let out = model.forward(&tokens, layers)?;
            (out.hidden, with_logits.then_some(out.logits))
        };
        records.push(PromptRecord {
            prompt_id: p.id,
            num_tokens,
            hidden,
            logits,
        });
    }
    Ok(ActivationDump {
        model_id: model_id.to_owned(),
        base_model_id: base_id.to_owned(),
        probe_hash: probe.hash().to_owned(),
        num_layers: cfg.n_layers,
        hidden_dim: cfg.d_model,
        vocab_size: if with_logits { cfg.vocab_size } else { 0 },
        layer_indices: layers.to_vec(),
        records,
        meaning: None,
    })
}

/// Runs the probe set through `ckpt` and `base`, producing one dump each.
///
/// When the two architectures differ, activation and logit capture is refused;
/// with a meaning source the pair still gets meaning-only dumps.
pub fn dump_activations(
    ckpt: &ToyLmCheckpoint,
    base: &ToyLmCheckpoint,
    probe: &ProbeSet,
    spec: &DumpSpec,
) -> Result<DumpPair, ToyLmError> {
    dump_models(&Model::new(ckpt), &Model::new(base), probe, spec)
}

pub fn dump_models(model: &Model, base: &Model, probe: &ProbeSet, spec: &DumpSpec) -> Result<DumpPair, ToyLmError> {
    let mut warnings = Vec::new();
    let mut layers = spec.layers.clone();
    layers.sort_unstable();
    layers.dedup();
    let mut with_logits = spec.with_logits;
    if !model.cfg.same_architecture(&base.cfg) && (!layers.is_empty() || with_logits) {
        if spec.meaning.is_none() {
            return Err(ToyLmError::ConfigMismatch(format!(
                "d_model {}/{} layers {}/{}",
                model.cfg.d_model, base.cfg.d_model, model.cfg.n_layers, base.cfg.n_layers
            )));
        }
        warnings.push(format!(
            "architectures differ (d_model {} vs {}): activation capture refused, meaning traces only",
            model.cfg.d_model, base.cfg.d_model
        ));
        layers.clear();
        with_logits = false;
    }
    let mut model_dump =
        activation_dump(model, &spec.model_id, &spec.base_id, probe, &layers, with_logits, &mut warnings)?;
    let mut base_warnings = Vec::new();
    let mut base_dump =
        activation_dump(base, &spec.base_id, &spec.base_id, probe, &layers, with_logits, &mut base_warnings)?;
    if let Some(source) = &spec.meaning {
        let continuations = match source {
            MeaningSource::SampleBase(params) => sample_probe_continuations(base, probe, params)?,
            MeaningSource::Fixed(c) => c.clone(),
        };
        model_dump.meaning = Some(meaning_trace(model, probe, &continuations)?);
        base_dump.meaning = Some(meaning_trace(base, probe, &continuations)?);
    }
    for w in base_warnings {
        if !warnings.contains(&w) {
            warnings.push(w);
        }
    }
    Ok(DumpPair {
        model: model_dump,
        base: base_dump,
        warnings,
    })
}
