//! Synthetic finetuning domains.
//!
//! Splits are disjoint by construction: every candidate string is assigned to
//! exactly one bucket by a fixed hash, and a split only keeps strings from its
//! own bucket.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ToyLmError;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// `A+B=C` with a correct sum.
    Arith,
    /// Balanced strings over `()[]{}`.
    Brackets,
    /// Uppercase word sequences.
    Upper,
    /// `word|drow`.
    Reversed,
    /// `def f(x): return x+K` style lines.
    Codeish,
}

impl Domain {
    pub const ALL: [Domain; 5] = [
        Domain::Arith,
        Domain::Brackets,
        Domain::Upper,
        Domain::Reversed,
        Domain::Codeish,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Arith => "arith",
            Domain::Brackets => "brackets",
            Domain::Upper => "upper",
            Domain::Reversed => "reversed",
            Domain::Codeish => "codeish",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = ToyLmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| ToyLmError::UnknownDomain(s.to_owned()))
    }
}

/// Which partition of a domain's example space to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    /// Data for pretraining a shared base model.
    Pretrain,
    /// Finetuning split 1..=3.
    Train(u8),
    /// Never used for training pools; few-shot task data comes from here.
    HeldOut,
}

impl Split {
    fn bucket(self) -> u64 {
        match self {
            Split::Pretrain => 0,
            Split::Train(k) => k as u64,
            Split::HeldOut => 4,
        }
    }
}

const BUCKETS: u64 = 5;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn bucket_of(example: &[u8]) -> u64 {
    fnv1a(example) % BUCKETS
}

fn word(rng: &mut SplitMix64, base: u8, min: usize, max: usize) -> String {
    let len = min + rng.below(max - min + 1);
    (0..len).map(|_| (base + rng.below(26) as u8) as char).collect()
}

fn brackets(rng: &mut SplitMix64, pairs: usize, out: &mut String) {
    const KINDS: [(char, char); 3] = [('(', ')'), ('[', ']'), ('{', '}')];
    if pairs == 0 {
        return;
    }
    let inside = rng.below(pairs);
    let (open, close) = KINDS[rng.below(3)];
    out.push(open);
    brackets(rng, inside, out);
    out.push(close);
    brackets(rng, pairs - 1 - inside, out);
}

fn generate(domain: Domain, rng: &mut SplitMix64) -> String {
    match domain {
        Domain::Arith => {
            let a = rng.below(1000);
            let b = rng.below(1000);
            format!("{a}+{b}={}", a + b)
        }
        Domain::Brackets => {
            let mut s = String::new();
            let pairs = 2 + rng.below(6);
            brackets(rng, pairs, &mut s);
            s
        }
        Domain::Upper => {
            let n = 2 + rng.below(3);
            (0..n)
                .map(|_| word(rng, b'A', 2, 6))
                .collect::<Vec<_>>()
                .join(" ")
        }
        Domain::Reversed => {
            let w = word(rng, b'a', 3, 7);
            let r: String = w.chars().rev().collect();
            format!("{w}|{r}")
        }
        Domain::Codeish => {
            const NAMES: [&str; 6] = ["f", "g", "h", "add", "step", "inc"];
            const VARS: [&str; 4] = ["x", "y", "n", "v"];
            const OPS: [char; 3] = ['+', '-', '*'];
            let name = NAMES[rng.below(NAMES.len())];
            let v = VARS[rng.below(VARS.len())];
            let op = OPS[rng.below(OPS.len())];
            format!("def {name}({v}): return {v}{op}{}", rng.below(100))
        }
    }
}

/// Deterministic, duplicate-free examples from one partition.
pub fn corpus(domain: Domain, split: Split, size: usize, seed: u64) -> Vec<Vec<u8>> {
    let stream = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(domain.tag() << 8 | split.bucket());
    let mut rng = SplitMix64::new(stream);
    let mut seen = HashSet::with_capacity(size);
    let mut out = Vec::with_capacity(size);
    let mut attempts = 0usize;
    while out.len() < size {
        attempts += 1;
        assert!(
            attempts <= 10_000 + size * 1_000,
            "example space of {domain} exhausted after {} examples",
            out.len()
        );
        let s = generate(domain, &mut rng).into_bytes();
        if bucket_of(&s) != split.bucket() || !seen.insert(s.clone()) {
            continue;
        }
        out.push(s);
    }
    out
}

/// Finetuning split `split` (1..=3) of `domain`.
pub fn toy_corpus(domain: Domain, split: u8, size: usize, seed: u64) -> Result<Vec<Vec<u8>>, ToyLmError> {
    if !(1..=3).contains(&split) {
        return Err(ToyLmError::InvalidSplit(split));
    }
    Ok(corpus(domain, Split::Train(split), size, seed))
}
