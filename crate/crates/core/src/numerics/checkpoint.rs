//! Parameter checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! u8        format version (currently 1)
//! u32       manifest length in bytes
//! [u8]      manifest, UTF-8 JSON:
//!           {"metadata": {key: string},
//!            "tensors": [{"name", "dtype": "f64", "shape": [..], "kind"}]}
//! [f64]     each tensor's values, row-major, in manifest order
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    /// Trainable parameter.
    Param,
    /// Non-trainable state such as running statistics.
    Buffer,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    kind: TensorKind,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    metadata: BTreeMap<String, String>,
    tensors: Vec<ManifestEntry>,
}

/// Named tensors plus free-form string metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<(String, TensorKind, Tensor)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            metadata: self.metadata.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, kind, t)| ManifestEntry {
                    name: name.clone(),
                    dtype: "f64".into(),
                    shape: t.shape().to_vec(),
                    kind: *kind,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let values: usize = self.tensors.iter().map(|(_, _, t)| t.numel()).sum();
        let mut out = Vec::with_capacity(5 + json.len() + 8 * values);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Contract(format!("malformed checkpoint: {msg}"));
        let (&version, rest) = bytes.split_first().ok_or_else(|| bad("empty file".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        if rest.len() < 4 {
            return Err(bad("truncated header".into()));
        }
        let len = u32::from_le_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
        let rest = &rest[4..];
        if rest.len() < len {
            return Err(bad("truncated manifest".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&rest[..len]).map_err(|e| bad(e.to_string()))?;
        let mut payload = &rest[len..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in manifest.tensors {
            if entry.dtype != "f64" {
                return Err(bad(format!("{}: unsupported dtype {}", entry.name, entry.dtype)));
            }
            let numel: usize = entry.shape.iter().product();
            if payload.len() < numel * 8 {
                return Err(bad(format!("{}: truncated data", entry.name)));
            }
            let data = payload[..numel * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            payload = &payload[numel * 8..];
            tensors.push((entry.name, entry.kind, Tensor::new(entry.shape, data)?));
        }
        if !payload.is_empty() {
            return Err(bad(format!("{} trailing bytes", payload.len())));
        }
        Ok(Self {
            metadata: manifest.metadata,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
