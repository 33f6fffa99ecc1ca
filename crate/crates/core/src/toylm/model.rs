//! Inference: a KV-cached, token-at-a-time forward pass.
//!
//! Processing one token at a time makes causality structural: row `t` of
//! every output is computed before token `t + 1` is even seen.

use std::collections::BTreeMap;

use super::checkpoint::ToyLmCheckpoint;
use super::config::{Layout, ToyLmConfig, VOCAB_SIZE};
use super::ops::{gelu, layernorm_row, linear_row, softmax_in_place};
use super::ToyLmError;
use crate::ingest::Matrix;

/// A checkpoint prepared for computation (weights widened to f64).
#[derive(Debug, Clone)]
pub struct Model {
    pub(crate) cfg: ToyLmConfig,
    pub(crate) layout: Layout,
    pub(crate) w: Vec<f64>,
}

impl Model {
    pub fn new(ckpt: &ToyLmCheckpoint) -> Self {
        Self::from_params(ckpt.config.clone(), ckpt.params.iter().map(|&p| p as f64).collect())
    }

    pub(crate) fn from_params(cfg: ToyLmConfig, w: Vec<f64>) -> Self {
        let layout = Layout::new(&cfg);
        assert_eq!(layout.total(), w.len(), "parameter count");
        Self { cfg, layout, w }
    }

    pub fn config(&self) -> &ToyLmConfig {
        &self.cfg
    }

    pub(crate) fn slice(&self, offset: usize, len: usize) -> &[f64] {
        &self.w[offset..offset + len]
    }

    pub fn session(&self) -> Session<'_> {
        let cap = self.cfg.max_context * self.cfg.d_model;
        Session {
            model: self,
            pos: 0,
            keys: (0..self.cfg.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
            values: (0..self.cfg.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
        }
    }

    /// Full forward pass. `capture` holds block indices (0 = embedding output,
    /// `l` = residual stream after block `l`).
    pub fn forward(&self, tokens: &[u16], capture: &[usize]) -> Result<ForwardOutput, ToyLmError> {
        if tokens.is_empty() {
            return Err(ToyLmError::EmptyInput);
        }
        if let Some(&l) = capture.iter().find(|&&l| l > self.cfg.n_layers) {
            return Err(ToyLmError::LayerOutOfRange {
                layer: l,
                n_layers: self.cfg.n_layers,
            });
        }
        let d = self.cfg.d_model;
        let t = tokens.len();
        let mut hidden: BTreeMap<usize, Vec<f32>> =
            capture.iter().map(|&l| (l, Vec::with_capacity(t * d))).collect();
        let mut logits = Vec::with_capacity(t * VOCAB_SIZE);
        let mut logits64 = Vec::with_capacity(t);
        let mut session = self.session();
        for &tok in tokens {
            let out = session.step(tok)?;
            for (l, buf) in hidden.iter_mut() {
                buf.extend(out.hidden[*l].iter().map(|&x| x as f32));
            }
            logits.extend(out.logits.iter().map(|&x| x as f32));
            logits64.push(out.logits);
        }
        Ok(ForwardOutput {
            hidden: hidden
                .into_iter()
                .map(|(l, data)| (l, Matrix::new(t, d, data)))
                .collect(),
            logits: Matrix::new(t, VOCAB_SIZE, logits),
            logits_f64: logits64,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub hidden: BTreeMap<usize, Matrix>,
    pub logits: Matrix,
    /// Unrounded logits, one row per token.
    pub logits_f64: Vec<Vec<f64>>,
}

/// Outputs of a single position.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// `n_layers + 1` residual-stream vectors; index 0 is the embedding output.
    pub hidden: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

/// Incremental decoding state.
#[derive(Debug, Clone)]
pub struct Session<'m> {
    model: &'m Model,
    pos: usize,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl Session<'_> {
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn max_context(&self) -> usize {
        self.model.cfg.max_context
    }

    /// Feeds one token and returns that position's outputs.
    pub fn step(&mut self, token: u16) -> Result<StepOutput, ToyLmError> {
        let m = self.model;
        let cfg = &m.cfg;
        let (d, f, nh, hs) = (cfg.d_model, cfg.ffn_dim, cfg.n_heads, cfg.head_dim());
        if self.pos >= cfg.max_context {
            return Err(ToyLmError::ContextOverflow {
                len: self.pos + 1,
                max: cfg.max_context,
            });
        }
        if token as usize >= VOCAB_SIZE {
            return Err(ToyLmError::InvalidToken(token));
        }
        let lay = &m.layout;
        let tok = token as usize;
        let mut x: Vec<f64> = m
            .slice(lay.wte + tok * d, d)
            .iter()
            .zip(m.slice(lay.wpe + self.pos * d, d))
            .map(|(a, b)| a + b)
            .collect();
        let mut hidden = Vec::with_capacity(cfg.n_layers + 1);
        hidden.push(x.clone());

        let scale = 1.0 / (hs as f64).sqrt();
        let mut ln = vec![0.0; d];
        let mut qkv = vec![0.0; 3 * d];
        let mut atty = vec![0.0; d];
        let mut proj = vec![0.0; d];
        let mut fc = vec![0.0; f];
        let mut mlp = vec![0.0; d];
        let n_ctx = self.pos + 1;
        let mut scores = vec![0.0; n_ctx];
        for (l, b) in lay.blocks.iter().enumerate() {
            layernorm_row(&x, m.slice(b.ln1_g, d), m.slice(b.ln1_b, d), &mut ln);
            linear_row(&ln, m.slice(b.qkv_w, d * 3 * d), Some(m.slice(b.qkv_b, 3 * d)), &mut qkv);
            self.keys[l].extend_from_slice(&qkv[d..2 * d]);
            self.values[l].extend_from_slice(&qkv[2 * d..]);
            let keys = &self.keys[l];
            let values = &self.values[l];
            for h in 0..nh {
                let q = &qkv[h * hs..(h + 1) * hs];
                for (u, s) in scores.iter_mut().enumerate() {
                    let k = &keys[u * d + h * hs..u * d + (h + 1) * hs];
                    *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_in_place(&mut scores);
                let out = &mut atty[h * hs..(h + 1) * hs];
                out.fill(0.0);
                for (u, &p) in scores.iter().enumerate() {
                    let v = &values[u * d + h * hs..u * d + (h + 1) * hs];
                    for (o, &vv) in out.iter_mut().zip(v) {
                        *o += p * vv;
                    }
                }
            }
            linear_row(&atty, m.slice(b.proj_w, d * d), Some(m.slice(b.proj_b, d)), &mut proj);
            for (xi, pi) in x.iter_mut().zip(&proj) {
                *xi += pi;
            }
            layernorm_row(&x, m.slice(b.ln2_g, d), m.slice(b.ln2_b, d), &mut ln);
            linear_row(&ln, m.slice(b.fc_w, d * f), Some(m.slice(b.fc_b, f)), &mut fc);
            fc.iter_mut().for_each(|v| *v = gelu(*v));
            linear_row(&fc, m.slice(b.out_w, f * d), Some(m.slice(b.out_b, d)), &mut mlp);
            for (xi, mi) in x.iter_mut().zip(&mlp) {
                *xi += mi;
            }
            hidden.push(x.clone());
        }
        layernorm_row(&x, m.slice(lay.lnf_g, d), m.slice(lay.lnf_b, d), &mut ln);
        let mut logits = vec![0.0; VOCAB_SIZE];
        linear_row(&ln, m.slice(lay.head_w, d * VOCAB_SIZE), None, &mut logits);
        self.pos += 1;
        Ok(StepOutput { hidden, logits })
    }
}

/// Softmax probabilities of one logits row.
pub fn probabilities(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    p
}
