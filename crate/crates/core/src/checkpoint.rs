//! Parameter persistence: a JSON manifest next to a raw little-endian
//! `f64` blob.
//!
//! The blob for `model.json` lives at `model.bin`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::ParamStore;
use crate::tensor::Array;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt manifest: {0}")]
    Manifest(String),
    #[error("blob length mismatch: manifest needs {expected} bytes, blob has {actual}")]
    BlobLength { expected: usize, actual: usize },
    #[error("parameter {name} missing from checkpoint")]
    Missing { name: String },
    #[error("checkpoint parameter {name} does not exist in the model")]
    Extra { name: String },
    #[error("parameter {name} has shape {found:?} in checkpoint but {expected:?} in the model")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub params: Vec<ManifestEntry>,
    pub dtype: String,
    pub endianness: String,
}

/// Named arrays read back from disk, in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<(String, Array)>,
}

pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the manifest at `path` and the blob beside it.
pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<(), CheckpointError> {
    let mut entries = Vec::with_capacity(params.len());
    let mut blob = Vec::with_capacity(params.scalar_count() * 8);
    for id in params.ids() {
        let value = params.value(id);
        entries.push(ManifestEntry {
            name: params.name(id).to_string(),
            shape: value.shape().to_vec(),
            offset: blob.len(),
        });
        for x in value.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        params: entries,
        dtype: "f64".into(),
        endianness: "little".into(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(io_err(path))?;
    let blob_file = blob_path(path);
    fs::write(&blob_file, blob).map_err(io_err(&blob_file))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    if manifest.dtype != "f64" || manifest.endianness != "little" {
        return Err(CheckpointError::Manifest(format!(
            "unsupported dtype/endianness {}/{}",
            manifest.dtype, manifest.endianness
        )));
    }
    let blob_file = blob_path(path);
    let blob = fs::read(&blob_file).map_err(io_err(&blob_file))?;

    let mut expected = 0;
    for e in &manifest.params {
        if e.offset != expected {
            return Err(CheckpointError::Manifest(format!(
                "parameter {} starts at byte {} but the previous one ends at {}",
                e.name, e.offset, expected
            )));
        }
        expected += e.shape.iter().product::<usize>() * 8;
    }
    if blob.len() != expected {
        return Err(CheckpointError::BlobLength {
            expected,
            actual: blob.len(),
        });
    }
    let params = manifest
        .params
        .into_iter()
        .map(|e| {
            let n: usize = e.shape.iter().product();
            let data = blob[e.offset..e.offset + n * 8]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            (e.name, Array::new(e.shape, data))
        })
        .collect();
    Ok(Checkpoint { params })
}

/// Overwrites every parameter of `store` from the checkpoint. Names must
/// match one-to-one and shapes exactly; `store` is untouched on error.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<(), CheckpointError> {
    let ckpt = load_checkpoint(path)?;
    let mut ids = Vec::with_capacity(ckpt.params.len());
    for (name, value) in &ckpt.params {
        let id = store.find(name).ok_or_else(|| CheckpointError::Extra { name: name.clone() })?;
        let expected = store.value(id).shape();
        if expected != value.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected: expected.to_vec(),
                found: value.shape().to_vec(),
            });
        }
        ids.push(id);
    }
    if let Some(missing) = store.names().iter().find(|n| !ckpt.params.iter().any(|(m, _)| m == *n)) {
        return Err(CheckpointError::Missing { name: missing.clone() });
    }
    for (id, (_, value)) in ids.into_iter().zip(ckpt.params) {
        *store.value_mut(id) = value;
    }
    Ok(())
}
