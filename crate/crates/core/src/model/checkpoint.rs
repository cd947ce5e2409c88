use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::{ModelSpec, ParamStore};

const MAGIC: &[u8; 8] = b"SUSCKPT1";

/// Parameter checkpoint.
///
/// Layout: 8-byte magic, little-endian `u64` header length, a JSON header
/// (model spec, seed, tensor index, free-form metadata), then every tensor's
/// values as little-endian `f64` in header order. Values round-trip bitwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub seed: u64,
    pub params: ParamStore,
    /// Extra tensors such as optimiser moments.
    pub aux: BTreeMap<String, Tensor>,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    seed: u64,
    tensors: Vec<Entry>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(spec: ModelSpec, seed: u64, params: ParamStore) -> Self {
        Self {
            spec,
            seed,
            params,
            aux: BTreeMap::new(),
            meta: serde_json::Value::Null,
        }
    }

    fn entries(&self) -> impl Iterator<Item = (String, &Tensor)> {
        self.params
            .iter()
            .map(|(n, t)| (format!("param/{n}"), t))
            .chain(self.aux.iter().map(|(n, t)| (format!("aux/{n}"), t)))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            spec: self.spec.clone(),
            seed: self.seed,
            tensors: self
                .entries()
                .map(|(name, t)| Entry {
                    name,
                    shape: t.shape().to_vec(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        let n_values: usize = self.entries().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * n_values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.entries() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(ckpt_err("not a checkpoint file (bad magic)"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + header_len)
            .ok_or_else(|| ckpt_err("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut cursor = 16 + header_len;
        let mut params = ParamStore::default();
        let mut aux = BTreeMap::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(cursor..cursor + 8 * n)
                .ok_or_else(|| ckpt_err(format!("truncated payload for `{}`", entry.name)))?;
            cursor += 8 * n;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let tensor = Tensor::new(entry.shape, values)?;
            if let Some(name) = entry.name.strip_prefix("param/") {
                params.insert(name.to_string(), tensor);
            } else if let Some(name) = entry.name.strip_prefix("aux/") {
                aux.insert(name.to_string(), tensor);
            } else {
                return Err(ckpt_err(format!("unknown tensor group in `{}`", entry.name)));
            }
        }
        if cursor != bytes.len() {
            return Err(ckpt_err(format!("{} trailing bytes", bytes.len() - cursor)));
        }
        Ok(Self {
            spec: header.spec,
            seed: header.seed,
            params,
            aux,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
