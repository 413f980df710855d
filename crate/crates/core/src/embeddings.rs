//! Loader for pretrained word vectors in the GloVe text layout: one token
//! followed by its float components per line, whitespace separated.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
}

#[derive(Debug, Clone, Default)]
pub struct Pretrained {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl Pretrained {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn insert(&mut self, token: &str, vector: Vec<f64>) {
        if self.vectors.is_empty() {
            self.dim = vector.len();
        }
        assert_eq!(vector.len(), self.dim, "embedding width mismatch");
        self.vectors.insert(token.to_string(), vector);
    }

    /// Reads vectors from `path`. When `keep` is given only those tokens are
    /// retained. A leading `count dim` header line is skipped.
    pub fn load(path: &Path, keep: Option<&HashSet<String>>) -> Result<Self, EmbeddingError> {
        let file = File::open(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read(BufReader::new(file), keep).map_err(|e| match e {
            EmbeddingError::Io { source, .. } => EmbeddingError::Io {
                path: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    pub fn read<R: BufRead>(reader: R, keep: Option<&HashSet<String>>) -> Result<Self, EmbeddingError> {
        let mut out = Pretrained::default();
        let mut dim: Option<usize> = None;
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|source| EmbeddingError::Io {
                path: String::new(),
                source,
            })?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if idx == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                dim = fields[1].parse().ok();
                continue;
            }
            let width = *dim.get_or_insert(fields.len() - 1);
            if width == 0 {
                return Err(EmbeddingError::Parse {
                    line: lineno,
                    message: "line has no vector components".into(),
                });
            }
            if fields.len() < width + 1 {
                return Err(EmbeddingError::DimensionMismatch {
                    line: lineno,
                    expected: width,
                    found: fields.len() - 1,
                });
            }
            // tokens may themselves contain spaces; the vector is the tail
            let split = fields.len() - width;
            let token = fields[..split].join(" ");
            if keep.is_some_and(|k| !k.contains(&token)) {
                continue;
            }
            let vector = fields[split..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbeddingError::Parse {
                    line: lineno,
                    message: format!("bad component: {e}"),
                })?;
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::Parse {
                    line: lineno,
                    message: "non-finite component".into(),
                });
            }
            out.vectors.insert(token, vector);
        }
        out.dim = dim.unwrap_or(0);
        Ok(out)
    }
}
