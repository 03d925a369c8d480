//! Named weight tensors for one model instance, with an on-disk manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::blob::{read_blob, write_blob, BlobError};
use crate::tensor::TensorValue;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("weight `{name}`: {source}")]
    Blob {
        name: String,
        #[source]
        source: BlobError,
    },
    #[error("weight `{0}` is missing")]
    Missing(String),
}

/// The weights `w_ij` of one model `j`, keyed by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    pub model: usize,
    pub tensors: BTreeMap<String, TensorValue>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema: u32,
    model: usize,
    weights: BTreeMap<String, String>,
}

impl WeightStore {
    pub fn new(model: usize) -> Self {
        WeightStore {
            model,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: TensorValue) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&TensorValue, WeightError> {
        self.tensors
            .get(name)
            .ok_or_else(|| WeightError::Missing(name.to_owned()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_bytes(&self) -> usize {
        self.tensors.values().map(|t| t.spec().size_in_bytes()).sum()
    }

    /// Writes `manifest.json` plus one `.tnsr` blob per weight into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), WeightError> {
        fs::create_dir_all(dir).map_err(|source| io_err(dir, source))?;
        let mut files = BTreeMap::new();
        for (i, (name, value)) in self.tensors.iter().enumerate() {
            let file = format!("{i:04}_{}.tnsr", sanitize(name));
            let path = dir.join(&file);
            let f = fs::File::create(&path).map_err(|source| io_err(&path, source))?;
            write_blob(BufWriter::new(f), value).map_err(|source| io_err(&path, source))?;
            files.insert(name.clone(), file);
        }
        let manifest = Manifest {
            schema: 1,
            model: self.model,
            weights: files,
        };
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|source| io_err(&path, source))
    }

    pub fn load(dir: &Path) -> Result<Self, WeightError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| io_err(&path, source))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| WeightError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if manifest.schema != 1 {
            return Err(WeightError::Manifest {
                path,
                message: format!("unsupported schema {}", manifest.schema),
            });
        }
        let mut store = WeightStore::new(manifest.model);
        for (name, file) in manifest.weights {
            let blob_path = dir.join(&file);
            let f = fs::File::open(&blob_path).map_err(|source| io_err(&blob_path, source))?;
            let value = read_blob(BufReader::new(f)).map_err(|source| WeightError::Blob {
                name: name.clone(),
                source,
            })?;
            store.insert(name, value);
        }
        Ok(store)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> WeightError {
    WeightError::Io {
        path: path.to_owned(),
        source,
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
