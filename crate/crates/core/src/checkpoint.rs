//! Model files. A checkpoint is a directory with three files:
//!
//! - `manifest.json`: format version, payload dtype, configurations, dev
//!   score, and the name and shape of every tensor in payload order.
//! - `params.bin`: the tensors back to back, row-major, little-endian `f32`
//!   or `f64`.
//! - `vocab.json`: the vocabulary as an array of tokens, row order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{Model, ModelConfig, Params, Vocabulary};
use crate::training::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const PAYLOAD: &str = "params.bin";
pub const VOCAB: &str = "vocab.json";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {file}: {message}")]
    Malformed { file: &'static str, message: String },
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: [usize; 2],
        found: [usize; 2],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(format!("unknown dtype {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: Dtype,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub dev_f1: f64,
    pub epoch: usize,
    pub vocab_size: usize,
    pub tensors: Vec<TensorEntry>,
}

/// Trained parameters with the settings and dev score that produced them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub train_config: TrainConfig,
    pub dev_f1: f64,
    pub epoch: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save(dir: &Path, checkpoint: &Checkpoint, dtype: Dtype) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let model = &checkpoint.model;
    let params = model.params();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype,
        model_config: model.config.clone(),
        train_config: checkpoint.train_config.clone(),
        dev_f1: checkpoint.dev_f1,
        epoch: checkpoint.epoch,
        vocab_size: model.vocab.len(),
        tensors: params
            .tensors()
            .into_iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape(),
            })
            .collect(),
    };

    let mut payload = Vec::with_capacity(params.num_parameters() * dtype.width());
    for (_, t) in params.tensors() {
        for &x in &t.data {
            match dtype {
                Dtype::F32 => payload.extend_from_slice(&(x as f32).to_le_bytes()),
                Dtype::F64 => payload.extend_from_slice(&x.to_le_bytes()),
            }
        }
    }

    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))
    };
    let manifest_text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(MANIFEST, manifest_text.as_bytes())?;
    write(PAYLOAD, &payload)?;
    let vocab_text = serde_json::to_string(model.vocab.tokens()).expect("vocabulary serializes");
    write(VOCAB, vocab_text.as_bytes())
}

pub fn load(dir: &Path) -> Result<Checkpoint, CheckpointError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|e| io_err(&path, e))
    };
    let manifest: Manifest = serde_json::from_slice(&read(MANIFEST)?).map_err(|e| CheckpointError::Malformed {
        file: MANIFEST,
        message: e.to_string(),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(manifest.format_version));
    }
    let rows: Vec<String> = serde_json::from_slice(&read(VOCAB)?).map_err(|e| CheckpointError::Malformed {
        file: VOCAB,
        message: e.to_string(),
    })?;
    if rows.len() != manifest.vocab_size {
        return Err(CheckpointError::Malformed {
            file: VOCAB,
            message: format!("{} tokens, manifest says {}", rows.len(), manifest.vocab_size),
        });
    }
    let vocab = Vocabulary::from_rows(rows).ok_or(CheckpointError::Malformed {
        file: VOCAB,
        message: "missing reserved rows or duplicate tokens".into(),
    })?;

    let mut params = Params::zeros(&manifest.model_config, vocab.len());
    let expected: Vec<(&str, [usize; 2])> = params.tensors().into_iter().map(|(n, t)| (n, t.shape())).collect();
    if expected.len() != manifest.tensors.len() {
        return Err(CheckpointError::Malformed {
            file: MANIFEST,
            message: format!("{} tensors listed, {} expected", manifest.tensors.len(), expected.len()),
        });
    }
    for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
        if *name != entry.name || *shape != entry.shape {
            return Err(CheckpointError::ShapeMismatch {
                name: entry.name.clone(),
                expected: *shape,
                found: entry.shape,
            });
        }
    }

    let payload = read(PAYLOAD)?;
    let width = manifest.dtype.width();
    if payload.len() != params.num_parameters() * width {
        return Err(CheckpointError::Malformed {
            file: PAYLOAD,
            message: format!("{} bytes, expected {}", payload.len(), params.num_parameters() * width),
        });
    }
    let mut chunks = payload.chunks_exact(width);
    for (_, t) in params.tensors_mut() {
        for x in t.data.iter_mut() {
            let c = chunks.next().expect("length checked above");
            *x = match manifest.dtype {
                Dtype::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                Dtype::F64 => f64::from_le_bytes(c.try_into().unwrap()),
            };
        }
    }
    if let Some((name, _)) = params.tensors().into_iter().find(|(_, t)| t.data.iter().any(|x| x.is_nan())) {
        return Err(CheckpointError::Malformed {
            file: PAYLOAD,
            message: format!("tensor {name} contains NaN"),
        });
    }

    Ok(Checkpoint {
        model: Model::from_parts(manifest.model_config, vocab, params),
        train_config: manifest.train_config,
        dev_f1: manifest.dev_f1,
        epoch: manifest.epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::predict;
    use crate::synth::{random_model, random_tokens, small_config};
    use crate::tagging::Scheme;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn checkpoint() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_model(&mut rng, small_config(4, 2, Scheme::OpinionFirst, true), 10);
        Checkpoint {
            model,
            train_config: TrainConfig::default(),
            dev_f1: 0.5,
            epoch: 3,
        }
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ck = checkpoint();
        save(dir.path(), &ck, Dtype::F64).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back.model.params(), ck.model.params());
        assert_eq!(back.model.vocab, ck.model.vocab);
        assert_eq!(back.model.config, ck.model.config);
        assert_eq!((back.dev_f1, back.epoch), (0.5, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let tokens = random_tokens(&mut rng, &ck.model.vocab, 6);
            assert_eq!(predict(&back.model, &tokens).unwrap(), predict(&ck.model, &tokens).unwrap());
        }
    }

    #[test]
    fn f32_payload_is_half_the_size() {
        let dir = tempfile::tempdir().unwrap();
        let ck = checkpoint();
        save(dir.path(), &ck, Dtype::F32).unwrap();
        let n = ck.model.params().num_parameters();
        assert_eq!(fs::metadata(dir.path().join(PAYLOAD)).unwrap().len() as usize, 4 * n);
        let back = load(dir.path()).unwrap();
        let a = &back.model.params().lstm_forward.w_input.data;
        let b = &ck.model.params().lstm_forward.w_input.data;
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6));
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &checkpoint(), Dtype::F64).unwrap();
        let payload = dir.path().join(PAYLOAD);
        let mut bytes = fs::read(&payload).unwrap();
        bytes.pop();
        fs::write(&payload, &bytes).unwrap();
        assert!(matches!(load(dir.path()), Err(CheckpointError::Malformed { file: PAYLOAD, .. })));

        save(dir.path(), &checkpoint(), Dtype::F64).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replacen("\"format_version\": 1", "\"format_version\": 9", 1)).unwrap();
        assert!(matches!(load(dir.path()), Err(CheckpointError::UnsupportedVersion(9))));

        save(dir.path(), &checkpoint(), Dtype::F64).unwrap();
        let mut manifest: Manifest = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        manifest.tensors[7].shape = [9, 9];
        fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(matches!(load(dir.path()), Err(CheckpointError::ShapeMismatch { .. })));
    }
}
