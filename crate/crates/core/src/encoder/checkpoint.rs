//! `DMR1` checkpoint format: the magic bytes, a little-endian `u64` header
//! length, a JSON header (model config, optional head kind, tensor
//! manifest), then every tensor's values as little-endian `f64` in manifest
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::head::{Head, HeadKind};
use super::model::{Model, ModelConfig};
use super::params::{Parameters, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DMR1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    head: Option<HeadKind>,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub head: Option<Head>,
}

impl Checkpoint {
    pub fn new(model: Model, head: Option<Head>) -> Self {
        Checkpoint { model, head }
    }

    fn all_tensors(&self) -> Vec<&Tensor> {
        let mut ts = self.model.tensors();
        if let Some(h) = &self.head {
            ts.extend(h.tensors());
        }
        ts
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.all_tensors();
        let header = Header {
            config: self.model.config().clone(),
            head: self.head.as_ref().map(Head::kind),
            tensors: tensors.iter().map(|t| Entry { name: t.name.clone(), shape: t.shape.clone() }).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let floats: usize = tensors.iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(12 + json.len() + 8 * floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::BadCheckpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing DMR1 magic"));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body_start =
            12usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[12..body_start])?;
        let mut floats =
            bytes[body_start..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        if !(bytes.len() - body_start).is_multiple_of(8) {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let data: Vec<f64> = floats.by_ref().take(n).collect();
            if data.len() != n {
                return Err(bad("payload ends early"));
            }
            tensors.push(Tensor { name: e.name, shape: e.shape, data });
        }
        if floats.next().is_some() {
            return Err(bad("trailing payload"));
        }
        let head = match header.head {
            None => None,
            Some(kind) => {
                if tensors.len() < 2 {
                    return Err(bad("head tensors missing"));
                }
                let bias = tensors.pop().expect("len checked");
                let weight = tensors.pop().expect("len checked");
                Some(Head::from_parts(kind, weight, bias)?)
            }
        };
        let model = Model::from_parts(header.config, tensors)?;
        Ok(Checkpoint { model, head })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
