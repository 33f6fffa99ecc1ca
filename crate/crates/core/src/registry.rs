//! On-disk store of model embeddings.
//!
//! A registry directory holds `registry.json` plus one little-endian f32 blob
//! per entry. Entries are immutable once added: re-adding an id is an error,
//! and adding a model never touches the stored vectors of others.
//!
//! Many readers or one writer at a time; there is no cross-process locking.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbeddingConfig, Method, ModelEmbedding};
use crate::ingest::{bytes_to_f32, f32_to_bytes};

pub const FORMAT_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "registry.json";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("model {0:?} is already registered")]
    Duplicate(String),
    #[error("no such model {0:?}")]
    Missing(String),
    #[error("dimension mismatch for {model_id:?}: cohort ({method}) has dim {expected}, got {found}")]
    DimMismatch {
        model_id: String,
        method: Method,
        expected: usize,
        found: usize,
    },
    #[error("invalid entry {model_id:?}: {reason}")]
    InvalidEntry { model_id: String, reason: String },
    #[error("no registry manifest in {0}")]
    NoManifest(PathBuf),
    #[error("unsupported registry format version {0:?}")]
    UnsupportedVersion(String),
    #[error("corrupt blob {path}: expected {expected} bytes, found {found}")]
    CorruptBlob {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: invalid registry manifest: {source}")]
    Manifest {
        path: PathBuf,
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RegistryError + '_ {
    move |source| RegistryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: String,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    model_id: String,
    base_model_id: String,
    method: Method,
    config: EmbeddingConfig,
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    blob: String,
    created_at: DateTime<Utc>,
}

/// File name for an entry's vector. Bytes outside `[A-Za-z0-9._-]` are
/// percent-escaped so any id maps to a single safe path component.
pub fn blob_name(model_id: &str) -> String {
    let mut out = String::with_capacity(model_id.len() + 4);
    for b in model_id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'.' || b == b'_' || b == b'-' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out.push_str(".f32");
    out
}

fn safe_blob(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && !name.contains(['/', '\\'])
        && name != MANIFEST_FILE
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    entries: BTreeMap<String, ModelEmbedding>,
    labels: BTreeMap<String, String>,
    dirty: bool,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Modified since the last save or load.
    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn contains(&self, model_id: &str) -> bool {
        self.entries.contains_key(model_id)
    }

    pub fn add(&mut self, e: ModelEmbedding, label: Option<&str>) -> Result<(), RegistryError> {
        if e.model_id.is_empty() {
            return Err(RegistryError::InvalidEntry {
                model_id: e.model_id,
                reason: "empty model id".into(),
            });
        }
        if self.entries.contains_key(&e.model_id) {
            return Err(RegistryError::Duplicate(e.model_id));
        }
        if e.vector.is_empty() {
            return Err(RegistryError::InvalidEntry {
                model_id: e.model_id,
                reason: "empty vector".into(),
            });
        }
        if let Some(i) = e.vector.iter().position(|x| !x.is_finite()) {
            return Err(RegistryError::InvalidEntry {
                model_id: e.model_id,
                reason: format!("non-finite value at element {i}"),
            });
        }
        if let Some(other) = self.cohort(e.method, &e.config).first() {
            if other.dim() != e.dim() {
                return Err(RegistryError::DimMismatch {
                    expected: other.dim(),
                    found: e.dim(),
                    method: e.method,
                    model_id: e.model_id,
                });
            }
        }
        if let Some(l) = label {
            self.labels.insert(e.model_id.clone(), l.to_string());
        }
        self.entries.insert(e.model_id.clone(), e);
        self.dirty = true;
        Ok(())
    }

    pub fn get(&self, model_id: &str) -> Result<&ModelEmbedding, RegistryError> {
        self.entries
            .get(model_id)
            .ok_or_else(|| RegistryError::Missing(model_id.to_string()))
    }

    pub fn label(&self, model_id: &str) -> Option<&str> {
        self.labels.get(model_id).map(String::as_str)
    }

    pub fn labels(&self) -> &BTreeMap<String, String> {
        &self.labels
    }

    /// All entries in model id order.
    pub fn list(&self) -> Vec<&ModelEmbedding> {
        self.entries.values().collect()
    }

    /// Entries sharing `method` and `config`, in model id order.
    pub fn cohort(&self, method: Method, config: &EmbeddingConfig) -> Vec<&ModelEmbedding> {
        self.entries
            .values()
            .filter(|e| e.method == method && &e.config == config)
            .collect()
    }

    /// Distinct `(method, config)` pairs present.
    pub fn cohorts(&self) -> Vec<(Method, EmbeddingConfig)> {
        let set: BTreeSet<_> = self.entries.values().map(|e| (e.method, e.config.clone())).collect();
        set.into_iter().collect()
    }

    pub fn remove(&mut self, model_id: &str) -> Result<ModelEmbedding, RegistryError> {
        let e = self
            .entries
            .remove(model_id)
            .ok_or_else(|| RegistryError::Missing(model_id.to_string()))?;
        self.labels.remove(model_id);
        self.dirty = true;
        Ok(e)
    }

    fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION.to_string(),
            entries: self
                .entries
                .values()
                .map(|e| ManifestEntry {
                    model_id: e.model_id.clone(),
                    base_model_id: e.base_model_id.clone(),
                    method: e.method,
                    config: e.config.clone(),
                    dim: e.dim(),
                    label: self.labels.get(&e.model_id).cloned(),
                    blob: blob_name(&e.model_id),
                    created_at: e.created_at,
                })
                .collect(),
        }
    }

    /// Writes the registry into `dir`, creating it if needed. Blobs of
    /// entries removed since the previous save are deleted.
    pub fn save(&mut self, dir: impl AsRef<Path>) -> Result<(), RegistryError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let manifest = self.manifest();
        let previous = read_manifest(dir).ok();
        for (entry, e) in manifest.entries.iter().zip(self.entries.values()) {
            let path = dir.join(&entry.blob);
            fs::write(&path, f32_to_bytes(&e.vector)).map_err(io_err(&path))?;
        }
        if let Some(prev) = previous {
            let keep: BTreeSet<&str> = manifest.entries.iter().map(|e| e.blob.as_str()).collect();
            for old in prev.entries.iter().filter(|e| safe_blob(&e.blob) && !keep.contains(e.blob.as_str())) {
                let path = dir.join(&old.blob);
                if path.exists() {
                    fs::remove_file(&path).map_err(io_err(&path))?;
                }
            }
        }
        let path = dir.join(MANIFEST_FILE);
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        fs::write(&path, json).map_err(io_err(&path))?;
        self.dirty = false;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let dir = dir.as_ref();
        let manifest = read_manifest(dir)?;
        let mut reg = Registry::new();
        for entry in manifest.entries {
            if !safe_blob(&entry.blob) {
                return Err(RegistryError::InvalidEntry {
                    model_id: entry.model_id,
                    reason: format!("unsafe blob name {:?}", entry.blob),
                });
            }
            let path = dir.join(&entry.blob);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            if bytes.len() != entry.dim * 4 {
                return Err(RegistryError::CorruptBlob {
                    path,
                    expected: entry.dim * 4,
                    found: bytes.len(),
                });
            }
            let e = ModelEmbedding {
                model_id: entry.model_id,
                base_model_id: entry.base_model_id,
                method: entry.method,
                vector: bytes_to_f32(&bytes),
                config: entry.config,
                created_at: entry.created_at,
            };
            reg.add(e, entry.label.as_deref())?;
        }
        reg.dirty = false;
        Ok(reg)
    }
}

fn read_manifest(dir: &Path) -> Result<Manifest, RegistryError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(RegistryError::NoManifest(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|source| RegistryError::Manifest {
        path: path.clone(),
        source,
    })?;
    match value.get("format_version").and_then(|v| v.as_str()) {
        Some(FORMAT_VERSION) => {}
        Some(other) => return Err(RegistryError::UnsupportedVersion(other.to_string())),
        None => return Err(RegistryError::UnsupportedVersion("<missing>".into())),
    }
    serde_json::from_value(value).map_err(|source| RegistryError::Manifest { path, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{LayerSelector, TokenSelector};

    fn act_config() -> EmbeddingConfig {
        EmbeddingConfig {
            probe_hash: Some("abc".into()),
            token_mode: Some(TokenSelector::Last),
            layer_mode: Some(LayerSelector::Last),
            n_meaning: None,
        }
    }

    fn emb(id: &str, v: Vec<f32>) -> ModelEmbedding {
        ModelEmbedding::new(id, "base", Method::DeltaActivations, v, act_config())
    }

    #[test]
    fn add_get_list_remove() {
        let mut r = Registry::new();
        assert!(r.list().is_empty());
        r.add(emb("b", vec![1.0, 2.0]), Some("math")).unwrap();
        assert_eq!(r.len(), 1);
        r.add(emb("a", vec![3.0, 4.0]), None).unwrap();
        assert_eq!(r.get("b").unwrap().vector, vec![1.0, 2.0]);
        let ids: Vec<_> = r.list().iter().map(|e| e.model_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(r.label("b"), Some("math"));
        r.remove("b").unwrap();
        assert!(matches!(r.get("b"), Err(RegistryError::Missing(_))));
        assert!(matches!(r.remove("b"), Err(RegistryError::Missing(_))));
        assert_eq!(r.label("b"), None);
    }

    #[test]
    fn duplicate_leaves_registry_unchanged() {
        let mut r = Registry::new();
        r.add(emb("a", vec![1.0]), Some("x")).unwrap();
        let before = r.clone();
        assert!(matches!(r.add(emb("a", vec![9.0]), Some("y")), Err(RegistryError::Duplicate(_))));
        assert_eq!(r, before);
    }

    #[test]
    fn cohort_dimension_is_enforced() {
        let mut r = Registry::new();
        r.add(emb("wide", vec![0.5; 32]), None).unwrap();
        let err = r.add(emb("narrow", vec![0.5; 16]), None).unwrap_err();
        assert!(matches!(err, RegistryError::DimMismatch { expected: 32, found: 16, .. }));
        // A different method is a different cohort.
        let m = ModelEmbedding::new("meaning", "base", Method::DeltaMeaning, vec![0.1; 16], act_config());
        r.add(m, None).unwrap();
        assert_eq!(r.cohorts().len(), 2);
    }

    #[test]
    fn rejects_non_finite() {
        let mut r = Registry::new();
        assert!(r.add(emb("a", vec![f32::NAN]), None).is_err());
        assert!(r.add(emb("", vec![1.0]), None).is_err());
    }

    #[test]
    fn save_load_round_trip_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Registry::new();
        r.add(emb("m/1 x", vec![1.5, -0.0, f32::MIN_POSITIVE]), Some("code")).unwrap();
        r.add(emb("m2", vec![3.0, 4.0, 5.0]), None).unwrap();
        assert!(r.is_dirty());
        r.save(dir.path()).unwrap();
        assert!(!r.is_dirty());
        let bytes1 = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        let loaded = Registry::load(dir.path()).unwrap();
        assert_eq!(loaded, r);
        for (a, b) in loaded.list().iter().zip(r.list()) {
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.vector), bits(&b.vector));
        }
        r.save(dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), bytes1);
        assert!(dir.path().join("m%2F1%20x.f32").exists());
    }

    #[test]
    fn removed_blobs_are_cleaned_up() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Registry::new();
        r.add(emb("a", vec![1.0]), None).unwrap();
        r.add(emb("b", vec![2.0]), None).unwrap();
        r.save(dir.path()).unwrap();
        r.remove("a").unwrap();
        r.save(dir.path()).unwrap();
        assert!(!dir.path().join("a.f32").exists());
        assert_eq!(Registry::load(dir.path()).unwrap().len(), 1);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = Registry::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no registry manifest"), "{err}");

        let mut r = Registry::new();
        r.add(emb("a", vec![1.0, 2.0]), None).unwrap();
        r.save(dir.path()).unwrap();
        fs::write(dir.path().join("a.f32"), [0u8; 4]).unwrap();
        assert!(matches!(
            Registry::load(dir.path()),
            Err(RegistryError::CorruptBlob { expected: 8, found: 4, .. })
        ));

        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("\"format_version\": \"1\"", "\"format_version\": \"7\"");
        fs::write(&path, text).unwrap();
        assert!(matches!(Registry::load(dir.path()), Err(RegistryError::UnsupportedVersion(v)) if v == "7"));
    }

    #[test]
    fn adding_never_changes_existing_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Registry::new();
        r.add(emb("a", vec![0.1, 0.2, 0.3]), None).unwrap();
        r.save(dir.path()).unwrap();
        let before = fs::read(dir.path().join("a.f32")).unwrap();
        r.add(emb("b", vec![7.0, 8.0, 9.0]), None).unwrap();
        r.save(dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join("a.f32")).unwrap(), before);
    }

    #[test]
    fn blob_names_escape() {
        assert_eq!(blob_name("arith-1_v2.0"), "arith-1_v2.0.f32");
        assert_eq!(blob_name("a/b"), "a%2Fb.f32");
        assert_eq!(blob_name("é"), "%C3%A9.f32");
        assert_ne!(blob_name("a/b"), blob_name("a%2Fb"));
    }
}
