//! Versioned checkpoint container.
//!
//! Layout: the 8-byte magic `STSECKPT`, a little-endian `u32` format version, a `u64`
//! header length, the JSON header, then the raw little-endian tensor blobs in the order
//! listed in the header. The header carries the config echo, the step counter, the RNG
//! state and one `{name, dtype, shape, offset, bytes}` entry per tensor. Keys are sorted,
//! so saving a loaded checkpoint reproduces the original bytes.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::ParamStore;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"STSECKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Seed and stream position of a `ChaCha8Rng`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Word position, decimal (a `u128` does not fit JSON numbers).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad RNG position {}", self.word_pos)))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    step: u64,
    rng: RngState,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub step: u64,
    pub rng: RngState,
    pub config: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

fn dtype_name(d: DType) -> Result<&'static str> {
    match d {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}

fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        DType::F64 => flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    })
}

impl Checkpoint {
    pub fn new(kind: &str, step: u64, rng: RngState, config: serde_json::Value) -> Self {
        Self {
            kind: kind.to_string(),
            step,
            rng,
            config,
            tensors: BTreeMap::new(),
        }
    }

    /// Adds every parameter of `store` under `prefix.`.
    pub fn add_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, var) in store.vars() {
            self.tensors.insert(format!("{prefix}.{name}"), var.as_tensor().detach());
        }
    }

    pub fn add_map(&mut self, prefix: &str, map: &BTreeMap<String, Tensor>) {
        for (name, t) in map {
            self.tensors.insert(format!("{prefix}.{name}"), t.detach());
        }
    }

    /// Tensors stored under `prefix.`, with the prefix removed.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
            .collect()
    }

    /// Loads the `prefix.` section into `store`, which must match it exactly.
    pub fn load_store(&self, prefix: &str, store: &ParamStore) -> Result<()> {
        let section = self.section(prefix);
        if section.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "section {prefix} holds {} tensors, model has {}",
                section.len(),
                store.len()
            )));
        }
        store.load_from(&section)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blobs = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let bytes = tensor_bytes(t)?;
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: dtype_name(t.dtype())?.to_string(),
                shape: t.dims().to_vec(),
                offset: blobs.len() as u64,
                bytes: bytes.len() as u64,
            });
            blobs.extend_from_slice(&bytes);
        }
        let header = Header {
            kind: self.kind.clone(),
            step: self.step,
            rng: self.rng.clone(),
            config: self.config.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + blobs.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blobs);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], device: &Device) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..body])?;
        let blobs = &bytes[body..];
        let mut tensors = BTreeMap::new();
        for e in &header.tensors {
            let start = e.offset as usize;
            let end = start + e.bytes as usize;
            if end > blobs.len() {
                return Err(Error::Checkpoint(format!("tensor {} is truncated", e.name)));
            }
            let raw = &blobs[start..end];
            let n: usize = e.shape.iter().product();
            let t = match e.dtype.as_str() {
                "f32" if raw.len() == 4 * n => {
                    let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                    Tensor::from_vec(v, e.shape.clone(), device)?
                }
                "f64" if raw.len() == 8 * n => {
                    let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                    Tensor::from_vec(v, e.shape.clone(), device)?
                }
                _ => return Err(Error::Checkpoint(format!("tensor {} has a bad dtype or size", e.name))),
            };
            tensors.insert(e.name.clone(), t);
        }
        Ok(Self {
            kind: header.kind,
            step: header.step,
            rng: header.rng,
            config: header.config,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, device)
    }
}
