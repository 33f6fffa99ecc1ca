//! Probe prompt sets.
//!
//! Every delta embedding is taken over a fixed, generic set of prompts fed
//! identically to a model and its base. A [`ProbeSet`] carries a canonical
//! SHA-256 hash of its texts so dumps produced from different probe contents
//! can never be compared by accident.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("empty probe set")]
    Empty,
    #[error("prompt {id}: empty prompt text")]
    EmptyPrompt { id: usize },
    #[error("prompt {id}: text contains a NUL byte")]
    NulByte { id: usize },
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("unknown bundled probe set {0:?} (available: {avail})", avail = BUNDLED_SETS.join(", "))]
    UnknownSet(String),
    #[error("reading probe file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbePrompt {
    /// 1-based position in the set.
    pub id: usize,
    pub text: String,
}

/// An ordered, hashed list of probe prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeSet {
    name: String,
    prompts: Vec<ProbePrompt>,
    hash: String,
}

impl ProbeSet {
    /// Builds a set from prompt texts, assigning ids 1..=N.
    pub fn new<S: Into<String>>(
        name: impl Into<String>,
        texts: impl IntoIterator<Item = S>,
    ) -> Result<Self, ProbeError> {
        let prompts: Vec<ProbePrompt> = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| ProbePrompt {
                id: i + 1,
                text: t.into(),
            })
            .collect();
        if prompts.is_empty() {
            return Err(ProbeError::Empty);
        }
        for p in &prompts {
            if p.text.is_empty() {
                return Err(ProbeError::EmptyPrompt { id: p.id });
            }
            if p.text.contains('\0') {
                return Err(ProbeError::NulByte { id: p.id });
            }
        }
        let hash = probe_hash(&prompts);
        Ok(Self {
            name: name.into(),
            prompts,
            hash,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn prompts(&self) -> &[ProbePrompt] {
        &self.prompts
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.prompts.iter().map(|p| p.text.as_str())
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// Concatenation of two sets (ids renumbered), used for aggregation checks.
    pub fn concat(&self, other: &ProbeSet) -> ProbeSet {
        let name = format!("{}+{}", self.name, other.name);
        ProbeSet::new(name, self.texts().chain(other.texts()).map(str::to_owned))
            .expect("concatenation of valid sets is valid")
    }
}

/// Canonical hash: SHA-256 over each prompt text followed by `\n`, in order.
pub fn probe_hash(prompts: &[ProbePrompt]) -> String {
    hash_texts(prompts.iter().map(|p| p.text.as_str()))
}

pub fn hash_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    let mut hasher = Sha256::new();
    for t in texts {
        hasher.update(t.as_bytes());
        hasher.update(b"\n");
    }
    to_hex(&hasher.finalize())
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Instruction-template paraphrases, in published order.
const PARAPHRASES: [&str; 20] = [
    "Below is an instruction that describes a task. Write a response that appropriately completes the request.",
    "The task described below requires a response that completes the request accurately.",
    "Below is a description of a task. Provide a response that aligns with the requirements.",
    "The following instruction outlines a task. Generate a response that meets the specified request.",
    "You are given an instruction and input. Write a response that completes the task as requested.",
    "You are provided with a task instruction and input. Write a response that fulfills the described requirements.",
    "Here is an instruction and its associated input. Complete the task with an appropriate response.",
    "Below is a task along with its context. Write a response that matches the requirements.",
    "The following is a description of a task and its input. Generate a response that fulfills the request.",
    "An outlined task is provided along with its input. Write a response that satisfies the given instruction.",
    "Given the following instruction, generate a suitable response that fulfills the request.",
    "The task described below requires a response that completes the request accurately.",
    "Below is a description of a task. Provide a response that aligns with the requirements.",
    "The following instruction outlines a task. Generate a response that meets the specified request.",
    "You are given an instruction and input. Write a response that completes the task as requested.",
    "Here is an instruction and its associated input. Create a response that properly addresses the request.",
    "Below is a task description. Provide an appropriate response that matches the input.",
    "An instruction and input are provided. Write a response that accurately completes the task.",
    "The following is an instruction that describes a task. Write a response that correctly satisfies the request.",
    "Below is an outlined task. Respond with a completion that fits the instruction and input given.",
];

const ONE_SENTENCE: [&str; 5] = [
    "Instruction: Please provide a response. Input: Input.",
    "Please perform the following task.",
    "Complete the instruction.",
    "Provide the appropriate response.",
    "Here is the text. Response:",
];

const ONE_WORD: [&str; 5] = ["Response:", "Answer:", "Explanation:", "Solution:", "Discussion:"];

/// Dummy instruction/input scaffold appended by the `alpaca-dummy` set.
/// Kept on one line so the set can round-trip through a probe file.
pub const ALPACA_DUMMY_SCAFFOLD: &str =
    " ### Instruction: Please provide a response. ### Input: Input. ### Response:";

/// Names accepted by [`bundled`].
pub const BUNDLED_SETS: [&str; 5] = [
    "default",
    "alpaca-dummy",
    "paraphrases-20",
    "one-sentence",
    "one-word",
];

/// The main-setting probe set: the first five instruction paraphrases.
pub fn default_probe_set() -> ProbeSet {
    ProbeSet::new("default", PARAPHRASES[..5].iter().copied()).expect("bundled set is valid")
}

/// Looks up a bundled probe set by name.
pub fn bundled(name: &str) -> Result<ProbeSet, ProbeError> {
    let set = match name {
        "default" => default_probe_set(),
        "alpaca-dummy" => ProbeSet::new(
            name,
            PARAPHRASES[..5]
                .iter()
                .map(|p| format!("{p}{ALPACA_DUMMY_SCAFFOLD}")),
        )?,
        "paraphrases-20" => ProbeSet::new(name, PARAPHRASES)?,
        "one-sentence" => ProbeSet::new(name, ONE_SENTENCE)?,
        "one-word" => ProbeSet::new(name, ONE_WORD)?,
        other => return Err(ProbeError::UnknownSet(other.to_owned())),
    };
    Ok(set)
}

/// Parses the probe file format: one prompt per line, `#` at column 0 starts
/// a comment line, blank lines are rejected.
pub fn parse_probe_file(name: &str, contents: &[u8], path: &str) -> Result<ProbeSet, ProbeError> {
    let mut texts = Vec::new();
    let body = contents.strip_suffix(b"\n").unwrap_or(contents);
    if body.is_empty() {
        return Err(ProbeError::Empty);
    }
    for (i, raw) in body.split(|&b| b == b'\n').enumerate() {
        let line_no = i + 1;
        let malformed = |reason: &str| ProbeError::Malformed {
            path: path.to_owned(),
            line: line_no,
            reason: reason.to_owned(),
        };
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| malformed("invalid UTF-8"))?;
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            return Err(malformed("blank line"));
        }
        if line.contains('\0') {
            return Err(malformed("NUL byte"));
        }
        texts.push(line.to_owned());
    }
    ProbeSet::new(name, texts)
}

pub fn load_probe_set(path: impl AsRef<Path>) -> Result<ProbeSet, ProbeError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| ProbeError::Io {
        path: shown.clone(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "probe".to_owned());
    parse_probe_file(&name, &bytes, &shown)
}

/// Renders a set in the probe file format (inverse of [`parse_probe_file`]).
pub fn to_probe_file(set: &ProbeSet) -> String {
    let mut out = String::new();
    for t in set.texts() {
        out.push_str(t);
        out.push('\n');
    }
    out
}
