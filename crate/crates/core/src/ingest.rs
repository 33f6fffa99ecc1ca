//! ACTV dump directories.
//!
//! Model execution and embedding computation communicate only through this
//! format, so any backend (the bundled toy transformer, a hub extractor, ...)
//! can feed the toolkit.
//!
//! Layout, version 1:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/prompt0001_layer06.f32     T*d little-endian f32, token-major
//! <dir>/prompt0001_logits.f32      T*V little-endian f32 (only if has_logits)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {source}")]
    Manifest {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("unsupported format version {0:?}")]
    UnsupportedVersion(String),
    #[error("missing blob {0}")]
    MissingBlob(PathBuf),
    #[error("{path}: expected {expected} bytes, found {found}")]
    BlobSize {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: non-finite value at element {index}")]
    NonFinite { path: PathBuf, index: usize },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Reasons a (finetuned, base) dump pair cannot be differenced.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PairError {
    #[error("probe mismatch: finetuned dump used probe {ft}, base dump used {base}")]
    ProbeMismatch { ft: String, base: String },
    #[error(
        "dimension mismatch: finetuned has {ft_layers} layers x {ft_dim} hidden, \
         base has {base_layers} layers x {base_dim} hidden"
    )]
    DimMismatch {
        ft_layers: usize,
        ft_dim: usize,
        base_layers: usize,
        base_dim: usize,
    },
    #[error("captured layer mismatch: finetuned {ft:?}, base {base:?}")]
    LayerMismatch { ft: Vec<usize>, base: Vec<usize> },
    #[error("tokenization mismatch at prompt {prompt_id}: {ft} tokens vs {base} tokens")]
    TokenizationMismatch {
        prompt_id: usize,
        ft: usize,
        base: usize,
    },
    #[error("lineage mismatch: finetuned declares base {declared:?}, got {actual:?}")]
    LineageMismatch { declared: String, actual: String },
}

/// Dense row-major f32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptRecord {
    pub prompt_id: usize,
    pub num_tokens: usize,
    /// Block index (1-based, 0 = embedding output) to a `num_tokens x hidden_dim` matrix.
    pub hidden: BTreeMap<usize, Matrix>,
    pub logits: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Continuation {
    /// Probe prompt the continuation was sampled for.
    #[serde(default = "first_prompt")]
    pub prompt_id: usize,
    pub text: String,
    pub num_tokens: usize,
}

fn first_prompt() -> usize {
    1
}

/// Base-sampled continuations and their mean token log-probability under
/// the dumped model. Entries are grouped by probe prompt, `n` per prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeaningTrace {
    pub continuations: Vec<Continuation>,
    pub mean_logprobs: Vec<f64>,
}

impl MeaningTrace {
    pub fn len(&self) -> usize {
        self.continuations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.continuations.is_empty()
    }

    /// Groups `(continuation, mean_logprob)` by prompt id, in prompt order.
    pub fn by_prompt(&self) -> BTreeMap<usize, Vec<(&Continuation, f64)>> {
        let mut groups: BTreeMap<usize, Vec<(&Continuation, f64)>> = BTreeMap::new();
        for (c, &lp) in self.continuations.iter().zip(&self.mean_logprobs) {
            groups.entry(c.prompt_id).or_default().push((c, lp));
        }
        groups
    }

    fn check(&self) -> Result<(), IngestError> {
        if self.continuations.is_empty() {
            return Err(IngestError::Invariant("meaning trace has no continuations".into()));
        }
        if self.continuations.len() != self.mean_logprobs.len() {
            return Err(IngestError::Invariant(format!(
                "meaning trace has {} continuations but {} log-probs",
                self.continuations.len(),
                self.mean_logprobs.len()
            )));
        }
        if let Some(c) = self.continuations.iter().find(|c| c.num_tokens == 0) {
            return Err(IngestError::Invariant(format!(
                "continuation {:?} has zero tokens",
                c.text
            )));
        }
        if let Some(i) = self.mean_logprobs.iter().position(|x| !x.is_finite()) {
            return Err(IngestError::Invariant(format!(
                "meaning log-prob {i} is not finite"
            )));
        }
        Ok(())
    }
}

/// Everything one model produced on one probe set.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDump {
    pub model_id: String,
    pub base_model_id: String,
    pub probe_hash: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// 0 when logits are absent.
    pub vocab_size: usize,
    pub layer_indices: Vec<usize>,
    pub records: Vec<PromptRecord>,
    pub meaning: Option<MeaningTrace>,
}

impl ActivationDump {
    pub fn has_logits(&self) -> bool {
        self.records.iter().any(|r| r.logits.is_some())
    }

    /// Checks every structural invariant of the format.
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: String| Err(IngestError::Invariant(m));
        if self.num_layers == 0 {
            return bad("num_layers must be positive".into());
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be positive".into());
        }
        if self.records.is_empty() {
            return bad("dump has no prompt records".into());
        }
        if self.layer_indices.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "layer_indices {:?} not strictly increasing",
                self.layer_indices
            ));
        }
        if let Some(&l) = self.layer_indices.iter().find(|&&l| l > self.num_layers) {
            return bad(format!("layer index {l} exceeds num_layers {}", self.num_layers));
        }
        let with_logits = self.records[0].logits.is_some();
        if with_logits && self.vocab_size == 0 {
            return bad("logits present but vocab_size is 0".into());
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.prompt_id != i + 1 {
                return bad(format!(
                    "record {i} has prompt_id {}, expected {}",
                    r.prompt_id,
                    i + 1
                ));
            }
            if r.num_tokens == 0 {
                return bad(format!("prompt {} has zero tokens", r.prompt_id));
            }
            let layers: Vec<usize> = r.hidden.keys().copied().collect();
            if layers != self.layer_indices {
                return bad(format!(
                    "prompt {} captures layers {layers:?}, manifest says {:?}",
                    r.prompt_id, self.layer_indices
                ));
            }
            for (l, m) in &r.hidden {
                if m.rows() != r.num_tokens || m.cols() != self.hidden_dim {
                    return bad(format!(
                        "prompt {} layer {l}: shape {}x{}, expected {}x{}",
                        r.prompt_id,
                        m.rows(),
                        m.cols(),
                        r.num_tokens,
                        self.hidden_dim
                    ));
                }
                if m.data().iter().any(|x| !x.is_finite()) {
                    return bad(format!("prompt {} layer {l}: non-finite value", r.prompt_id));
                }
            }
            match &r.logits {
                Some(m) if !with_logits => {
                    return bad(format!(
                        "prompt {} has logits but prompt 1 does not ({}x{})",
                        r.prompt_id,
                        m.rows(),
                        m.cols()
                    ))
                }
                None if with_logits => {
                    return bad(format!("prompt {} is missing logits", r.prompt_id))
                }
                Some(m) => {
                    if m.rows() != r.num_tokens || m.cols() != self.vocab_size {
                        return bad(format!(
                            "prompt {} logits: shape {}x{}, expected {}x{}",
                            r.prompt_id,
                            m.rows(),
                            m.cols(),
                            r.num_tokens,
                            self.vocab_size
                        ));
                    }
                    if m.data().iter().any(|x| !x.is_finite()) {
                        return bad(format!("prompt {} logits: non-finite value", r.prompt_id));
                    }
                }
                None => {}
            }
        }
        if let Some(m) = &self.meaning {
            m.check()?;
            if let Some(c) = m.continuations.iter().find(|c| c.prompt_id == 0 || c.prompt_id > self.records.len()) {
                return bad(format!(
                    "continuation refers to prompt {} of {}",
                    c.prompt_id,
                    self.records.len()
                ));
            }
        }
        Ok(())
    }

    /// Non-fatal oddities: log-probs above zero cannot come from a proper
    /// probability model.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(m) = &self.meaning {
            for (i, &lp) in m.mean_logprobs.iter().enumerate() {
                if lp > 0.0 {
                    out.push(format!(
                        "{}: meaning log-prob {i} is positive ({lp})",
                        self.model_id
                    ));
                }
            }
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: String,
    model_id: String,
    base_model_id: String,
    probe_hash: String,
    num_layers: usize,
    hidden_dim: usize,
    vocab_size: usize,
    layer_indices: Vec<usize>,
    records: Vec<ManifestRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meaning: Option<MeaningTrace>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    prompt_id: usize,
    num_tokens: usize,
    has_logits: bool,
}

pub fn layer_blob_name(prompt_id: usize, layer: usize) -> String {
    format!("prompt{prompt_id:04}_layer{layer:02}.f32")
}

pub fn logits_blob_name(prompt_id: usize) -> String {
    format!("prompt{prompt_id:04}_logits.f32")
}

pub(crate) fn f32_to_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn bytes_to_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `dump` into `dir` (created if needed).
pub fn write_dump(dump: &ActivationDump, dir: impl AsRef<Path>) -> Result<(), IngestError> {
    let dir = dir.as_ref();
    dump.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION.to_owned(),
        model_id: dump.model_id.clone(),
        base_model_id: dump.base_model_id.clone(),
        probe_hash: dump.probe_hash.clone(),
        num_layers: dump.num_layers,
        hidden_dim: dump.hidden_dim,
        vocab_size: dump.vocab_size,
        layer_indices: dump.layer_indices.clone(),
        records: dump
            .records
            .iter()
            .map(|r| ManifestRecord {
                prompt_id: r.prompt_id,
                num_tokens: r.num_tokens,
                has_logits: r.logits.is_some(),
            })
            .collect(),
        meaning: dump.meaning.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(io_err(&path))?;
    for r in &dump.records {
        for (&layer, m) in &r.hidden {
            let p = dir.join(layer_blob_name(r.prompt_id, layer));
            fs::write(&p, f32_to_bytes(m.data())).map_err(io_err(&p))?;
        }
        if let Some(m) = &r.logits {
            let p = dir.join(logits_blob_name(r.prompt_id));
            fs::write(&p, f32_to_bytes(m.data())).map_err(io_err(&p))?;
        }
    }
    Ok(())
}

fn read_blob(path: &Path, rows: usize, cols: usize) -> Result<Matrix, IngestError> {
    if !path.exists() {
        return Err(IngestError::MissingBlob(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    let expected = rows * cols * 4;
    if bytes.len() != expected {
        return Err(IngestError::BlobSize {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes_to_f32(&bytes);
    if let Some(index) = data.iter().position(|x| !x.is_finite()) {
        return Err(IngestError::NonFinite {
            path: path.to_path_buf(),
            index,
        });
    }
    Ok(Matrix::new(rows, cols, data))
}

/// Reads and fully validates a dump directory.
pub fn read_dump(dir: impl AsRef<Path>) -> Result<ActivationDump, IngestError> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|source| IngestError::Manifest {
            path: path.clone(),
            source,
        })?;
    // Check the version before the full schema so newer layouts fail with a clear message.
    match value.get("format_version").and_then(|v| v.as_str()) {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(IngestError::UnsupportedVersion(other.to_owned())),
        None => return Err(IngestError::UnsupportedVersion(String::from("<missing>"))),
    }
    let manifest: Manifest =
        serde_json::from_value(value).map_err(|source| IngestError::Manifest {
            path: path.clone(),
            source,
        })?;
    let mut records = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let mut hidden = BTreeMap::new();
        for &layer in &manifest.layer_indices {
            let p = dir.join(layer_blob_name(r.prompt_id, layer));
            hidden.insert(layer, read_blob(&p, r.num_tokens, manifest.hidden_dim)?);
        }
        let logits = if r.has_logits {
            let p = dir.join(logits_blob_name(r.prompt_id));
            Some(read_blob(&p, r.num_tokens, manifest.vocab_size)?)
        } else {
            None
        };
        records.push(PromptRecord {
            prompt_id: r.prompt_id,
            num_tokens: r.num_tokens,
            hidden,
            logits,
        });
    }
    let dump = ActivationDump {
        model_id: manifest.model_id,
        base_model_id: manifest.base_model_id,
        probe_hash: manifest.probe_hash,
        num_layers: manifest.num_layers,
        hidden_dim: manifest.hidden_dim,
        vocab_size: manifest.vocab_size,
        layer_indices: manifest.layer_indices,
        records,
        meaning: manifest.meaning,
    };
    dump.validate()?;
    for w in dump.warnings() {
        log::warn!("{w}");
    }
    Ok(dump)
}

/// Checks that `ft` can be differenced against `base`.
pub fn validate_pair(ft: &ActivationDump, base: &ActivationDump) -> Result<(), PairError> {
    check_shapes(ft, base)?;
    if ft.base_model_id != base.model_id {
        return Err(PairError::LineageMismatch {
            declared: ft.base_model_id.clone(),
            actual: base.model_id.clone(),
        });
    }
    Ok(())
}

/// The symmetric part of [`validate_pair`]: everything except lineage.
pub fn check_shapes(ft: &ActivationDump, base: &ActivationDump) -> Result<(), PairError> {
    if ft.probe_hash != base.probe_hash {
        return Err(PairError::ProbeMismatch {
            ft: ft.probe_hash.clone(),
            base: base.probe_hash.clone(),
        });
    }
    if ft.num_layers != base.num_layers || ft.hidden_dim != base.hidden_dim {
        return Err(PairError::DimMismatch {
            ft_layers: ft.num_layers,
            ft_dim: ft.hidden_dim,
            base_layers: base.num_layers,
            base_dim: base.hidden_dim,
        });
    }
    if ft.layer_indices != base.layer_indices {
        return Err(PairError::LayerMismatch {
            ft: ft.layer_indices.clone(),
            base: base.layer_indices.clone(),
        });
    }
    check_tokenization(ft, base)
}

/// Per-prompt token counts must agree so deltas are token-aligned.
pub fn check_tokenization(ft: &ActivationDump, base: &ActivationDump) -> Result<(), PairError> {
    if ft.records.len() != base.records.len() {
        // Equal probe hashes make this unreachable for well-formed dumps.
        return Err(PairError::TokenizationMismatch {
            prompt_id: ft.records.len().min(base.records.len()) + 1,
            ft: ft.records.len(),
            base: base.records.len(),
        });
    }
    for (a, b) in ft.records.iter().zip(&base.records) {
        if a.num_tokens != b.num_tokens {
            return Err(PairError::TokenizationMismatch {
                prompt_id: a.prompt_id,
                ft: a.num_tokens,
                base: b.num_tokens,
            });
        }
    }
    Ok(())
}
