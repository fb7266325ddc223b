//! Binary checkpoints: an 8-byte little-endian manifest length, a JSON
//! manifest, then every tensor as little-endian f64 in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGroup, ParamStore, Tensor};
use crate::error::{Error, Result};

const FORMAT: &str = "featmeta-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Parameters plus free-form metadata (the run configuration, tag set, ...).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub entries: Vec<TensorEntry>,
    pub tensors: Vec<Tensor>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, meta: serde_json::Value) -> Self {
        let (entries, tensors) = store
            .iter()
            .map(|(_, p)| {
                (
                    TensorEntry {
                        name: p.name.clone(),
                        group: p.group,
                        shape: p.value.shape().to_vec(),
                    },
                    p.value.clone(),
                )
            })
            .unzip();
        Checkpoint { entries, tensors, meta }
    }

    /// Copies the tensors into a store with the same names and shapes.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.entries.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, model has {}",
                self.entries.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for ((id, entry), t) in ids.into_iter().zip(&self.entries).zip(&self.tensors) {
            let p = store.get(id);
            if p.name != entry.name || p.value.shape() != entry.shape.as_slice() {
                return Err(Error::Config(format!(
                    "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                    entry.name,
                    entry.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            *store.value_mut(id) = t.clone();
        }
        Ok(())
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        tensors: ckpt.entries.clone(),
        meta: ckpt.meta.clone(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(8 + json.len() + 8 * ckpt.tensors.iter().map(Tensor::numel).sum::<usize>());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &ckpt.tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8], source_name: &str) -> Result<Checkpoint> {
    let bad = |m: String| Error::Config(format!("{source_name}: {m}"));
    let head: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| bad("truncated header".into()))?;
    let len = u64::from_le_bytes(head) as usize;
    let json = bytes
        .get(8..8usize.saturating_add(len))
        .ok_or_else(|| bad("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| bad(format!("bad manifest: {e}")))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(bad(format!("unsupported format {} v{}", manifest.format, manifest.version)));
    }
    let mut pos = 8 + len;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let raw = bytes
            .get(pos..pos + 8 * n)
            .ok_or_else(|| bad(format!("truncated data for {}", entry.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(entry.shape.clone(), data)?);
        pos += 8 * n;
    }
    if pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(Checkpoint {
        entries: manifest.tensors,
        tensors,
        meta: manifest.meta,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, write_checkpoint(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, &path.display().to_string())
}
