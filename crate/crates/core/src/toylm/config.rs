use serde::{Deserialize, Serialize};

use super::ToyLmError;

/// 256 byte values plus BOS and PAD.
pub const VOCAB_SIZE: usize = 258;
pub const BOS: u16 = 256;
pub const PAD: u16 = 257;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyLmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_context: usize,
    pub seed: u64,
}

impl Default for ToyLmConfig {
    fn default() -> Self {
        Self::new(32, 6, 4, 64, 0)
    }
}

impl ToyLmConfig {
    /// Config with the FFN at the conventional 4x width.
    pub fn new(d_model: usize, n_layers: usize, n_heads: usize, max_context: usize, seed: u64) -> Self {
        Self {
            vocab_size: VOCAB_SIZE,
            d_model,
            n_layers,
            n_heads,
            ffn_dim: 4 * d_model,
            max_context,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ToyLmError> {
        let bad = |m: String| Err(ToyLmError::InvalidConfig(m));
        if self.vocab_size != VOCAB_SIZE {
            return bad(format!("vocab_size must be {VOCAB_SIZE}, got {}", self.vocab_size));
        }
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.ffn_dim == 0 {
            return bad("d_model, n_layers, n_heads and ffn_dim must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.max_context < 2 {
            return bad(format!("max_context must be at least 2, got {}", self.max_context));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Same shapes (the seed may differ).
    pub fn same_architecture(&self, other: &ToyLmConfig) -> bool {
        let strip = |c: &ToyLmConfig| ToyLmConfig { seed: 0, ..c.clone() };
        strip(self) == strip(other)
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (v, d, f, c, l) = (
            self.vocab_size,
            self.d_model,
            self.ffn_dim,
            self.max_context,
            self.n_layers,
        );
        let block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        v * d + c * d + l * block + 2 * d + d * v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    /// Drawn from N(0, 0.02^2) at init.
    Weight,
    /// Layer-norm gain, initialised to 1.
    Gain,
    /// Initialised to 0.
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub kind: TensorKind,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Offsets of one block's tensors inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub qkv_w: usize,
    pub qkv_b: usize,
    pub proj_w: usize,
    pub proj_b: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub fc_w: usize,
    pub fc_b: usize,
    pub out_w: usize,
    pub out_b: usize,
}

/// Canonical tensor order. Matrices are stored `[in, out]` row-major so a
/// layer computes `y = x W + b`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub(crate) tensors: Vec<TensorSpec>,
    pub(crate) wte: usize,
    pub(crate) wpe: usize,
    pub(crate) blocks: Vec<BlockOffsets>,
    pub(crate) lnf_g: usize,
    pub(crate) lnf_b: usize,
    pub(crate) head_w: usize,
    pub(crate) total: usize,
}

impl Layout {
    pub fn new(cfg: &ToyLmConfig) -> Self {
        let (v, d, f, c) = (cfg.vocab_size, cfg.d_model, cfg.ffn_dim, cfg.max_context);
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, kind: TensorKind| {
            let start = offset;
            let spec = TensorSpec {
                name,
                shape,
                offset: start,
                kind,
            };
            offset += spec.len();
            tensors.push(spec);
            start
        };
        let wte = push("wte".into(), vec![v, d], TensorKind::Weight);
        let wpe = push("wpe".into(), vec![c, d], TensorKind::Weight);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = |s: &str| format!("blocks.{i}.{s}");
            blocks.push(BlockOffsets {
                ln1_g: push(p("ln1.gain"), vec![d], TensorKind::Gain),
                ln1_b: push(p("ln1.bias"), vec![d], TensorKind::Bias),
                qkv_w: push(p("attn.qkv.weight"), vec![d, 3 * d], TensorKind::Weight),
                qkv_b: push(p("attn.qkv.bias"), vec![3 * d], TensorKind::Bias),
                proj_w: push(p("attn.proj.weight"), vec![d, d], TensorKind::Weight),
                proj_b: push(p("attn.proj.bias"), vec![d], TensorKind::Bias),
                ln2_g: push(p("ln2.gain"), vec![d], TensorKind::Gain),
                ln2_b: push(p("ln2.bias"), vec![d], TensorKind::Bias),
                fc_w: push(p("mlp.fc.weight"), vec![d, f], TensorKind::Weight),
                fc_b: push(p("mlp.fc.bias"), vec![f], TensorKind::Bias),
                out_w: push(p("mlp.proj.weight"), vec![f, d], TensorKind::Weight),
                out_b: push(p("mlp.proj.bias"), vec![d], TensorKind::Bias),
            });
        }
        let lnf_g = push("lnf.gain".into(), vec![d], TensorKind::Gain);
        let lnf_b = push("lnf.bias".into(), vec![d], TensorKind::Bias);
        let head_w = push("head.weight".into(), vec![d, v], TensorKind::Weight);
        Self {
            tensors,
            wte,
            wpe,
            blocks,
            lnf_g,
            lnf_b,
            head_w,
            total: offset,
        }
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_closed_form() {
        for cfg in [
            ToyLmConfig::default(),
            ToyLmConfig::new(8, 1, 2, 4, 0),
            ToyLmConfig::new(16, 3, 4, 128, 9),
        ] {
            let layout = Layout::new(&cfg);
            let summed: usize = layout.tensors().iter().map(TensorSpec::len).sum();
            assert_eq!(summed, layout.total());
            assert_eq!(summed, cfg.param_count());
        }
        // d=32, L=6, ctx=64 by hand: 258*32 + 64*32 + 6*12704 + 64 + 32*258.
        assert_eq!(ToyLmConfig::default().param_count(), 8256 + 2048 + 76224 + 64 + 8256);
    }

    #[test]
    fn config_validation() {
        assert!(ToyLmConfig::default().validate().is_ok());
        assert!(ToyLmConfig::new(30, 2, 4, 64, 0).validate().is_err());
        assert!(ToyLmConfig::new(32, 2, 4, 1, 0).validate().is_err());
        let mut c = ToyLmConfig::default();
        c.vocab_size = 100;
        assert!(c.validate().is_err());
    }
}
