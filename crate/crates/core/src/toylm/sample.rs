use super::checkpoint::ToyLmCheckpoint;
use super::config::BOS;
use super::model::{Model, Session};
use super::ops::{log_softmax_at, softmax_in_place};
use super::ToyLmError;
use crate::rng::SplitMix64;

/// Byte-level tokenization: BOS followed by the UTF-8 bytes.
pub fn encode(text: &str) -> Vec<u16> {
    encode_bytes(text.as_bytes())
}

pub fn encode_bytes(bytes: &[u8]) -> Vec<u16> {
    std::iter::once(BOS)
        .chain(bytes.iter().map(|&b| b as u16))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    pub n: usize,
    pub max_new_tokens: usize,
    /// 0 selects greedy decoding.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplingParams {
    /// n = 20 continuations at temperature 1.0, 16 new tokens each.
    fn default() -> Self {
        Self {
            n: 20,
            max_new_tokens: 16,
            temperature: 1.0,
            seed: 0,
        }
    }
}

fn prefill<'m>(model: &'m Model, tokens: &[u16]) -> Result<(Session<'m>, Vec<f64>), ToyLmError> {
    let mut session = model.session();
    let mut last = Vec::new();
    for &t in tokens {
        last = session.step(t)?.logits;
    }
    Ok((session, last))
}

/// Next byte drawn from the ASCII range only, so continuations are always
/// valid UTF-8 text; BOS and PAD are never produced.
fn draw(logits: &[f64], temperature: f64, rng: &mut SplitMix64) -> u8 {
    let ascii = &logits[..128];
    if temperature == 0.0 {
        let mut best = 0;
        for (i, &l) in ascii.iter().enumerate() {
            if l > ascii[best] {
                best = i;
            }
        }
        return best as u8;
    }
    let mut p: Vec<f64> = ascii.iter().map(|l| l / temperature).collect();
    softmax_in_place(&mut p);
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i as u8;
        }
    }
    127
}

/// Ancestral sampling of `n` continuations of `prompt`, each exactly
/// `max_new_tokens` bytes long.
pub fn sample_with(model: &Model, prompt: &[u8], params: &SamplingParams) -> Result<Vec<Vec<u8>>, ToyLmError> {
    if params.n == 0 {
        return Err(ToyLmError::InvalidSampling("n must be at least 1".into()));
    }
    if !(params.temperature >= 0.0 && params.temperature.is_finite()) {
        return Err(ToyLmError::InvalidSampling(format!(
            "temperature {}",
            params.temperature
        )));
    }
    let tokens = encode_bytes(prompt);
    let needed = tokens.len() + params.max_new_tokens;
    if needed > model.cfg.max_context {
        return Err(ToyLmError::ContextOverflow {
            len: needed,
            max: model.cfg.max_context,
        });
    }
    let (session, first_logits) = prefill(model, &tokens)?;
    let mut rng = SplitMix64::new(params.seed);
    let mut out = Vec::with_capacity(params.n);
    for _ in 0..params.n {
        let mut s = session.clone();
        let mut logits = first_logits.clone();
        let mut cont = Vec::with_capacity(params.max_new_tokens);
        for i in 0..params.max_new_tokens {
            let b = draw(&logits, params.temperature, &mut rng);
            cont.push(b);
            if i + 1 < params.max_new_tokens {
                logits = s.step(b as u16)?.logits;
            }
        }
        out.push(cont);
    }
    Ok(out)
}

pub fn sample_continuations(
    ckpt: &ToyLmCheckpoint,
    prompt: &str,
    params: &SamplingParams,
) -> Result<Vec<Vec<u8>>, ToyLmError> {
    sample_with(&Model::new(ckpt), prompt.as_bytes(), params)
}

/// Mean over continuation tokens of `log p(token | prompt, earlier tokens)`.
pub fn score_with(model: &Model, prompt: &[u8], continuation: &[u8]) -> Result<f64, ToyLmError> {
    let (session, logits) = prefill(model, &encode_bytes(prompt))?;
    score_from(session, logits, continuation)
}

/// Scores several continuations of one prompt, sharing the prompt prefill.
pub fn score_many(model: &Model, prompt: &[u8], continuations: &[&[u8]]) -> Result<Vec<f64>, ToyLmError> {
    let (session, logits) = prefill(model, &encode_bytes(prompt))?;
    continuations
        .iter()
        .map(|c| score_from(session.clone(), logits.clone(), c))
        .collect()
}

fn score_from(mut session: Session<'_>, mut logits: Vec<f64>, continuation: &[u8]) -> Result<f64, ToyLmError> {
    if continuation.is_empty() {
        return Err(ToyLmError::EmptyInput);
    }
    let max = session.max_context();
    let needed = session.position() + continuation.len();
    if needed > max {
        return Err(ToyLmError::ContextOverflow { len: needed, max });
    }
    let mut total = 0.0;
    for (i, &b) in continuation.iter().enumerate() {
        total += log_softmax_at(&logits, b as usize);
        if i + 1 < continuation.len() {
            logits = session.step(b as u16)?.logits;
        }
    }
    Ok(total / continuation.len() as f64)
}

pub fn score_continuation(ckpt: &ToyLmCheckpoint, prompt: &str, continuation: &str) -> Result<f64, ToyLmError> {
    score_with(&Model::new(ckpt), prompt.as_bytes(), continuation.as_bytes())
}
