//! Versioned binary parameter container.
//!
//! Layout: the magic bytes `DKDCKPT\0`, a little-endian u32 format
//! version, a little-endian u64 manifest length, the JSON manifest, then
//! every tensor as consecutive little-endian f64 values. Manifest offsets
//! count bytes from the start of that data block.

use std::fs;
use std::io::Write;
use std::path::Path;

use dkd_autograd::Tensor;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, Net};
use crate::error::{DkdError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DKDCKPT\0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub config_hash: String,
    pub lambda: f64,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    /// Caller-defined settings, e.g. the training configuration.
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    #[serde(flatten)]
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor)>,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> DkdError {
    DkdError::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn new(model: &ModelConfig, lambda: f64, epoch: usize, step: u64) -> Self {
        Self {
            meta: CheckpointMeta {
                model: *model,
                config_hash: model.hash(),
                lambda,
                epoch,
                step,
                extra: serde_json::Value::Null,
            },
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn take(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self
            .get(name)
            .ok_or_else(|| DkdError::Config(format!("checkpoint has no tensor `{name}`")))?;
        if t.shape() != shape {
            return Err(DkdError::Shape(format!("tensor `{name}` is {:?}, expected {shape:?}", t.shape())));
        }
        Ok(t)
    }

    /// Stores parameters and running statistics under `prefix`.
    pub fn push_net(&mut self, prefix: &str, net: &Net) {
        for (name, t) in net.names().iter().zip(net.params()) {
            self.push(format!("{prefix}.{name}"), t.clone());
        }
        for (name, r) in net.bn_names().iter().zip(net.bn_stats()) {
            let c = r.mean.len();
            self.push(format!("{prefix}.{name}.mean"), Tensor::new(&[c], r.mean.clone()).expect("1-d"));
            self.push(format!("{prefix}.{name}.var"), Tensor::new(&[c], r.var.clone()).expect("1-d"));
        }
    }

    /// Overwrites `net` from tensors stored by [`Checkpoint::push_net`].
    pub fn restore_net(&self, prefix: &str, net: &mut Net) -> Result<()> {
        let names = net.names().to_vec();
        for (i, name) in names.iter().enumerate() {
            let shape = net.params()[i].shape().to_vec();
            net.params_mut()[i] = self.take(&format!("{prefix}.{name}"), &shape)?.clone();
        }
        let bn_names = net.bn_names().to_vec();
        for (i, name) in bn_names.iter().enumerate() {
            let c = net.bn_stats()[i].mean.len();
            let mean = self.take(&format!("{prefix}.{name}.mean"), &[c])?.data().to_vec();
            let var = self.take(&format!("{prefix}.{name}.var"), &[c])?.data().to_vec();
            net.bn_stats_mut()[i] = super::RunningStats { mean, var };
        }
        Ok(())
    }

    /// Stores a list of tensors (e.g. optimizer state) as `prefix.<i>`.
    pub fn push_list(&mut self, prefix: &str, ts: &[Tensor]) {
        for (i, t) in ts.iter().enumerate() {
            self.push(format!("{prefix}.{i}"), t.clone());
        }
    }

    pub fn restore_list(&self, prefix: &str, ts: &mut [Tensor]) -> Result<()> {
        for (i, t) in ts.iter_mut().enumerate() {
            let shape = t.shape().to_vec();
            *t = self.take(&format!("{prefix}.{i}"), &shape)?.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: "f64".into(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 8 * t.numel() as u64;
        }
        let manifest = serde_json::to_vec(&Manifest {
            format_version: CHECKPOINT_VERSION,
            meta: self.meta.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(20 + manifest.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Writes atomically through a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes()?)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt(path, "missing checkpoint header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(path, format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + len).ok_or_else(|| corrupt(path, "truncated manifest"))?;
        let m: Manifest = serde_json::from_slice(body).map_err(|e| corrupt(path, format!("manifest: {e}")))?;
        let data = &bytes[20 + len..];
        let mut tensors = Vec::with_capacity(m.tensors.len());
        for e in m.tensors {
            if e.dtype != "f64" {
                return Err(corrupt(path, format!("tensor `{}` has dtype {}", e.name, e.dtype)));
            }
            let numel: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = data
                .get(start..start + 8 * numel)
                .ok_or_else(|| corrupt(path, format!("tensor `{}` runs past the end", e.name)))?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((e.name, Tensor::new(&e.shape, values).map_err(|err| corrupt(path, err.to_string()))?));
        }
        if m.meta.config_hash != m.meta.model.hash() {
            return Err(corrupt(path, "config hash does not match the stored model config"));
        }
        Ok(Self { meta: m.meta, tensors })
    }

    /// Reads a checkpoint; with `expected`, rejects one written for another model.
    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let ck = Self::from_bytes(&bytes, path)?;
        if let Some(cfg) = expected {
            let want = cfg.hash();
            if ck.meta.config_hash != want {
                return Err(DkdError::ConfigHashMismatch {
                    expected: want,
                    found: ck.meta.config_hash,
                });
            }
        }
        Ok(ck)
    }
}
