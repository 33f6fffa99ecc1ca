use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Layout, TensorKind, TensorSpec, ToyLmConfig};
use super::ToyLmError;
use crate::ingest::{bytes_to_f32, f32_to_bytes};
use crate::rng::SplitMix64;

pub const MODEL_FILE: &str = "model.json";
pub const TENSORS_FILE: &str = "tensors.f32";
const INIT_STD: f64 = 0.02;

/// Weights of a toy model, all tensors concatenated in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLmCheckpoint {
    pub config: ToyLmConfig,
    pub params: Vec<f32>,
    /// Optimizer steps taken since init.
    pub step: u64,
}

impl ToyLmCheckpoint {
    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    /// Tensor by canonical name, e.g. `blocks.0.attn.qkv.weight`.
    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        let layout = self.layout();
        let spec = layout.find(name)?;
        Some(&self.params[spec.offset..spec.offset + spec.len()])
    }
}

/// Fresh model: weights ~ N(0, 0.02^2) drawn in canonical order from the
/// config seed, gains 1, biases 0.
pub fn init_model(config: &ToyLmConfig) -> Result<ToyLmCheckpoint, ToyLmError> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut rng = SplitMix64::new(config.seed);
    let mut params = vec![0.0f32; layout.total()];
    for spec in layout.tensors() {
        let slot = &mut params[spec.offset..spec.offset + spec.len()];
        match spec.kind {
            TensorKind::Weight => slot
                .iter_mut()
                .for_each(|p| *p = (rng.normal() * INIT_STD) as f32),
            TensorKind::Gain => slot.fill(1.0),
            TensorKind::Bias => slot.fill(0.0),
        }
    }
    Ok(ToyLmCheckpoint {
        config: config.clone(),
        params,
        step: 0,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    format_version: String,
    config: ToyLmConfig,
    step: u64,
    tensors: Vec<TensorSpec>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ToyLmError + '_ {
    move |source| ToyLmError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_checkpoint(ckpt: &ToyLmCheckpoint, dir: impl AsRef<Path>) -> Result<(), ToyLmError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io(dir))?;
    let manifest = ModelManifest {
        format_version: "1".into(),
        config: ckpt.config.clone(),
        step: ckpt.step,
        tensors: ckpt.layout().tensors().to_vec(),
    };
    let mpath = dir.join(MODEL_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, json + "\n").map_err(io(&mpath))?;
    let tpath = dir.join(TENSORS_FILE);
    fs::write(&tpath, f32_to_bytes(&ckpt.params)).map_err(io(&tpath))?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<ToyLmCheckpoint, ToyLmError> {
    let dir = dir.as_ref();
    let mpath = dir.join(MODEL_FILE);
    let text = fs::read_to_string(&mpath).map_err(io(&mpath))?;
    let manifest: ModelManifest = serde_json::from_str(&text)
        .map_err(|e| ToyLmError::Format(format!("{}: {e}", mpath.display())))?;
    if manifest.format_version != "1" {
        return Err(ToyLmError::Format(format!(
            "unsupported checkpoint version {:?}",
            manifest.format_version
        )));
    }
    manifest.config.validate()?;
    let layout = Layout::new(&manifest.config);
    if manifest.tensors != layout.tensors() {
        return Err(ToyLmError::Format(
            "tensor manifest does not match the config's canonical layout".into(),
        ));
    }
    let tpath = dir.join(TENSORS_FILE);
    let bytes = fs::read(&tpath).map_err(io(&tpath))?;
    if bytes.len() != layout.total() * 4 {
        return Err(ToyLmError::Format(format!(
            "{}: expected {} bytes, found {}",
            tpath.display(),
            layout.total() * 4,
            bytes.len()
        )));
    }
    let params = bytes_to_f32(&bytes);
    if params.iter().any(|p| !p.is_finite()) {
        return Err(ToyLmError::Format(format!("{}: non-finite weight", tpath.display())));
    }
    Ok(ToyLmCheckpoint {
        config: manifest.config,
        params,
        step: manifest.step,
    })
}
