//! Checkpoint codec: a JSON manifest followed by a flat little-endian
//! IEEE-754 payload, in one file.
//!
//! Layout: 8-byte little-endian manifest length, the manifest JSON, then the
//! payload. The manifest echoes the full training config and lists every
//! tensor with its name, shape, dtype, and byte offset into the payload, so
//! a checkpoint is self-describing and evaluation never needs the original
//! config file. Values round-trip bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CblipModel, TaskMode};
use crate::numerics::{ParamStore, Scalar, Tensor};
use crate::train::TrainConfig;

pub const FORMAT_VERSION: &str = "cblip-ckpt-1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Offset into the payload (bytes after the manifest).
    pub byte_offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: TrainConfig,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Error, Debug)]
pub enum CheckpointError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint version `{found}` (expected `{FORMAT_VERSION}`)")]
    Version { found: String },
    #[error("checkpoint truncated: {detail}")]
    Truncated { detail: String },
    #[error("tensor `{name}`: dtype `{found}` does not match requested `{expected}`")]
    DtypeMismatch {
        name: String,
        found: String,
        expected: String,
    },
    #[error("tensor `{name}`: shape {found:?} does not match model shape {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checkpoint is missing tensor `{name}` required by the model")]
    MissingTensor { name: String },
    #[error("checkpoint contains tensor `{name}` unknown to the model")]
    UnknownTensor { name: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Serializes the config echo and every parameter to `path`.
pub fn save<T: Scalar>(
    path: &Path,
    config: &TrainConfig,
    store: &ParamStore<T>,
) -> Result<(), CheckpointError> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut payload = Vec::new();
    for (_, name, value) in store.iter() {
        tensors.push(TensorEntry {
            name: name.to_owned(),
            shape: value.shape().to_vec(),
            dtype: T::DTYPE.to_owned(),
            byte_offset: payload.len() as u64,
        });
        for &x in value.data() {
            x.write_le(&mut payload);
        }
    }
    let manifest = Manifest {
        version: FORMAT_VERSION.to_owned(),
        config: config.clone(),
        tensors,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(8 + manifest_bytes.len() + payload.len());
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    out.extend_from_slice(&payload);
    fs::write(path, out).map_err(io_err(path))
}

/// Reads just the manifest (for inspection).
pub fn read_manifest(path: &Path) -> Result<Manifest, CheckpointError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_manifest(&bytes, path).map(|(m, _)| m)
}

fn parse_manifest(bytes: &[u8], path: &Path) -> Result<(Manifest, usize), CheckpointError> {
    let _ = path;
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated {
            detail: "missing length header".into(),
        });
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + len {
        return Err(CheckpointError::Truncated {
            detail: format!("manifest claims {len} bytes, file has {}", bytes.len() - 8),
        });
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[8..8 + len])?;
    if manifest.version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: manifest.version,
        });
    }
    Ok((manifest, 8 + len))
}

/// Loads the config echo and all named tensors.
pub fn load_raw<T: Scalar>(
    path: &Path,
) -> Result<(TrainConfig, Vec<(String, Tensor<T>)>), CheckpointError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (manifest, payload_start) = parse_manifest(&bytes, path)?;
    let payload = &bytes[payload_start..];
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        if entry.dtype != T::DTYPE {
            return Err(CheckpointError::DtypeMismatch {
                name: entry.name.clone(),
                found: entry.dtype.clone(),
                expected: T::DTYPE.to_owned(),
            });
        }
        let numel: usize = entry.shape.iter().product();
        let start = entry.byte_offset as usize;
        let end = start + numel * T::BYTES;
        if end > payload.len() {
            return Err(CheckpointError::Truncated {
                detail: format!("tensor `{}` extends past payload end", entry.name),
            });
        }
        let data: Vec<T> = payload[start..end]
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect();
        let tensor = Tensor::from_vec(&entry.shape, data).expect("shape/payload agreement");
        tensors.push((entry.name.clone(), tensor));
    }
    Ok((manifest.config, tensors))
}

/// Rebuilds a full model from a checkpoint: the architecture comes from the
/// config echo, vocabulary sizes from the stored table shapes, and every
/// parameter is restored bit-exactly. The tensor sets must match the model's
/// exactly.
pub fn load_model<T: Scalar>(path: &Path) -> Result<(TrainConfig, CblipModel<T>), CheckpointError> {
    let (config, tensors) = load_raw::<T>(path)?;
    let find = |name: &str| -> Option<&Tensor<T>> {
        tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    };
    let num_relations = find("relation_emb")
        .ok_or_else(|| CheckpointError::MissingTensor {
            name: "relation_emb".into(),
        })?
        .rows();

    let mut model: CblipModel<T> = match config.mode {
        TaskMode::Inductive => {
            CblipModel::new_inductive(config.model_config(), num_relations, config.seed)
        }
        TaskMode::Transductive => {
            let num_entities = find("entity_emb")
                .ok_or_else(|| CheckpointError::MissingTensor {
                    name: "entity_emb".into(),
                })?
                .rows();
            CblipModel::new_transductive(
                config.model_config(),
                num_relations,
                num_entities,
                config.seed,
            )
        }
    };

    for (name, tensor) in &tensors {
        let id = model
            .store
            .find(name)
            .ok_or_else(|| CheckpointError::UnknownTensor { name: name.clone() })?;
        let expected = model.store.value(id).shape().to_vec();
        if tensor.shape() != expected {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                found: tensor.shape().to_vec(),
                expected,
            });
        }
        *model.store.value_mut(id) = tensor.clone().with_grad();
    }
    for (_, name, _) in model.store.iter() {
        if !tensors.iter().any(|(n, _)| n == name) {
            return Err(CheckpointError::MissingTensor {
                name: name.to_owned(),
            });
        }
    }
    Ok((config, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::BiasMode;
    use crate::train::TrainConfig;

    fn small_config() -> TrainConfig {
        TrainConfig {
            d: 4,
            d_model: 8,
            heads: 2,
            layers: 1,
            d_ff: 16,
            m: 4,
            ..TrainConfig::inductive_defaults()
        }
    }

    #[test]
    fn save_load_round_trips_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = small_config();
        let model = CblipModel::<f32>::new_inductive(cfg.model_config(), 5, cfg.seed);
        save(&path, &cfg, &model.store).unwrap();

        let (loaded_cfg, loaded) = load_model::<f32>(&path).unwrap();
        assert_eq!(loaded_cfg, cfg);
        assert_eq!(loaded.store.len(), model.store.len());
        for ((_, na, va), (_, nb, vb)) in model.store.iter().zip(loaded.store.iter()) {
            assert_eq!(na, nb);
            assert_eq!(va.shape(), vb.shape());
            // Bit-exact comparison.
            for (a, b) in va.data().iter().zip(vb.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn manifest_lists_config_and_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = small_config();
        let model = CblipModel::<f32>::new_inductive(cfg.model_config(), 3, cfg.seed);
        save(&path, &cfg, &model.store).unwrap();

        let manifest = read_manifest(&path).unwrap();
        assert_eq!(manifest.version, FORMAT_VERSION);
        assert_eq!(manifest.config, cfg);
        assert_eq!(manifest.tensors.len(), model.store.len());
        assert!(manifest.tensors.iter().any(|t| t.name == "relation_emb"));
        assert!(manifest.tensors.iter().all(|t| t.dtype == "f32"));
    }

    #[test]
    fn vanilla_checkpoint_has_no_bias_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vanilla.ckpt");
        let mut cfg = small_config();
        cfg.bias_mode = BiasMode::Vanilla;
        let model = CblipModel::<f32>::new_inductive(cfg.model_config(), 3, cfg.seed);
        save(&path, &cfg, &model.store).unwrap();

        let manifest = read_manifest(&path).unwrap();
        assert!(!manifest
            .tensors
            .iter()
            .any(|t| t.name.contains("key_bias") || t.name.contains("value_bias")));
    }

    #[test]
    fn corrupted_file_is_a_codec_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"ab").unwrap();
        assert!(matches!(
            load_model::<f32>(&path),
            Err(CheckpointError::Truncated { .. })
        ));

        fs::write(&path, [42u8; 64]).unwrap();
        assert!(load_model::<f32>(&path).is_err());
    }

    #[test]
    fn wrong_dtype_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = small_config();
        let model = CblipModel::<f32>::new_inductive(cfg.model_config(), 3, cfg.seed);
        save(&path, &cfg, &model.store).unwrap();
        assert!(matches!(
            load_model::<f64>(&path),
            Err(CheckpointError::DtypeMismatch { .. })
        ));
    }

    #[test]
    fn version_field_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = small_config();
        let model = CblipModel::<f32>::new_inductive(cfg.model_config(), 3, cfg.seed);
        save(&path, &cfg, &model.store).unwrap();

        // Tamper with the version string inside the manifest.
        let bytes = fs::read(&path).unwrap();
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let manifest_str = String::from_utf8(bytes[8..8 + len].to_vec()).unwrap();
        let tampered = manifest_str.replace(FORMAT_VERSION, "cblip-ckpt-0");
        let mut out = Vec::new();
        out.extend_from_slice(&(tampered.len() as u64).to_le_bytes());
        out.extend_from_slice(tampered.as_bytes());
        out.extend_from_slice(&bytes[8 + len..]);
        fs::write(&path, out).unwrap();

        assert!(matches!(
            load_model::<f32>(&path),
            Err(CheckpointError::Version { .. })
        ));
    }
}
