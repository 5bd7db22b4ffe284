//! Self-describing tensor container used for spectrum caches and checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u64` manifest length, the JSON
//! manifest, then each tensor as little-endian `f64` row-major in manifest
//! order.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{JscnError, Result};

pub const SPECTRUM_MAGIC: &[u8; 8] = b"JSCNSPC1";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"JSCNCKP1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    meta: Value,
    tensors: Vec<TensorEntry>,
}

/// Named float64 tensors plus free-form JSON metadata.
#[derive(Debug, Clone, Default)]
pub struct Container {
    pub meta: Value,
    tensors: Vec<(String, ArrayD<f64>)>,
}

impl Container {
    pub fn new(meta: Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: ArrayD<f64>) {
        self.tensors.push((name.into(), t));
    }

    pub fn push_matrix(&mut self, name: impl Into<String>, m: &Array2<f64>) {
        self.push(name, m.clone().into_dyn());
    }

    pub fn push_vector(&mut self, name: impl Into<String>, v: &Array1<f64>) {
        self.push(name, v.clone().into_dyn());
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        let t = self.get(name).ok_or_else(|| missing(name))?;
        t.clone()
            .into_dimensionality()
            .map_err(|_| JscnError::Config(format!("tensor {name} is not a matrix")))
    }

    pub fn vector(&self, name: &str) -> Result<Array1<f64>> {
        let t = self.get(name).ok_or_else(|| missing(name))?;
        t.clone()
            .into_dimensionality()
            .map_err(|_| JscnError::Config(format!("tensor {name} is not a vector")))
    }

    pub fn to_bytes(&self, magic: &[u8; 8]) -> Result<Vec<u8>> {
        let manifest = Manifest {
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    dtype: "f64".into(),
                })
                .collect(),
        };
        // round-trip through Value so object keys come out sorted
        let json = serde_json::to_vec(&serde_json::to_value(&manifest)?)?;
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload);
        out.extend_from_slice(magic);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| JscnError::Container {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != magic {
            return Err(bad(&format!(
                "expected magic {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json_end = 16usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("manifest length exceeds file size"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..json_end])?;
        let mut offset = json_end;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in manifest.tensors {
            if entry.dtype != "f64" {
                return Err(bad(&format!("unsupported dtype {}", entry.dtype)));
            }
            let count: usize = entry.shape.iter().product();
            let end = offset + count * 8;
            if end > bytes.len() {
                return Err(bad(&format!("truncated tensor {}", entry.name)));
            }
            let data: Vec<f64> = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset = end;
            let t = ArrayD::from_shape_vec(IxDyn(&entry.shape), data)
                .map_err(|e| bad(&e.to_string()))?;
            tensors.push((entry.name, t));
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(Self {
            meta: manifest.meta,
            tensors,
        })
    }

    pub fn write(&self, path: &Path, magic: &[u8; 8]) -> Result<()> {
        std::fs::write(path, self.to_bytes(magic)?).map_err(crate::error::file_err(path))?;
        Ok(())
    }

    pub fn read(path: &Path, magic: &[u8; 8]) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(crate::error::file_err(path))?;
        Self::from_bytes(&bytes, magic, path)
    }
}

fn missing(name: &str) -> JscnError {
    JscnError::Config(format!("container has no tensor named {name}"))
}
