//! Binary weights container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"GSWEIGHT"
//! version u32 (= 1)
//! count   u32
//! count x { name_len u32, name utf-8, ndim u32, dims u64 x ndim, payload f32 x prod(dims) }
//! ```
//!
//! A JSON manifest (`<file>.json`) lists each tensor's name, shape and byte
//! offset of its payload together with the SHA-256 of the binary file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::Params;

pub const MAGIC: &[u8; 8] = b"GSWEIGHT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightsFile {
    pub tensors: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub version: u32,
    pub sha256: String,
    pub tensors: Vec<ManifestEntry>,
}

fn werr(msg: impl std::fmt::Display) -> Error {
    Error::Weights(msg.to_string())
}

impl WeightsFile {
    /// Snapshot every tensor of `params` (values narrowed to f32).
    pub fn collect(params: &mut impl Params, prefix: &str) -> Self {
        let mut tensors = BTreeMap::new();
        params.visit_mut(prefix, &mut |name, shape, data| {
            tensors.insert(
                name.to_string(),
                Tensor {
                    shape: shape.to_vec(),
                    data: data.iter().map(|&v| v as f32).collect(),
                },
            );
        });
        WeightsFile { tensors }
    }

    /// Overwrite `params` with the stored tensors. Every parameter must be
    /// present with the same shape and every stored tensor must be used.
    pub fn apply(&self, params: &mut impl Params, prefix: &str) -> Result<()> {
        let mut used = 0usize;
        let mut failure: Option<Error> = None;
        params.visit_mut(prefix, &mut |name, shape, data| {
            if failure.is_some() {
                return;
            }
            match self.tensors.get(name) {
                None => failure = Some(werr(format!("missing tensor {name}"))),
                Some(t) if t.shape != shape => {
                    failure = Some(werr(format!("tensor {name} has shape {:?}, expected {:?}", t.shape, shape)))
                }
                Some(t) => {
                    for (d, &s) in data.iter_mut().zip(&t.data) {
                        *d = f64::from(s);
                    }
                    used += 1;
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if used != self.tensors.len() {
            return Err(werr(format!(
                "{} stored tensors do not belong to the model",
                self.tensors.len() - used
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> (Vec<u8>, Vec<ManifestEntry>) {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut entries = Vec::new();
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                offset: out.len() as u64,
            });
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        (out, entries)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(werr("bad magic bytes"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(werr(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| werr("tensor name is not utf-8"))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| werr(format!("tensor {name} is too large")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| werr("tensor too large"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if tensors.insert(name.clone(), Tensor { shape, data }).is_some() {
                return Err(werr(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(werr("trailing bytes after the last tensor"));
        }
        Ok(WeightsFile { tensors })
    }

    /// Write the binary file and its manifest; returns the manifest path.
    pub fn save(&self, path: &Path) -> Result<PathBuf> {
        let (bytes, tensors) = self.to_bytes();
        std::fs::write(path, &bytes)?;
        let manifest = WeightsManifest {
            version: VERSION,
            sha256: hex::encode(Sha256::digest(&bytes)),
            tensors,
        };
        let mpath = manifest_path(path);
        std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)?)?;
        Ok(mpath)
    }

    /// Read a binary file; when a manifest sits next to it, its checksum and
    /// tensor list must agree with the binary.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let file = Self::from_bytes(&bytes)?;
        let mpath = manifest_path(path);
        if mpath.exists() {
            let manifest: WeightsManifest = serde_json::from_str(&std::fs::read_to_string(&mpath)?)?;
            if manifest.sha256 != hex::encode(Sha256::digest(&bytes)) {
                return Err(werr("manifest checksum does not match the weights file"));
            }
            if manifest.tensors != file.to_bytes().1 {
                return Err(werr("manifest tensor list does not match the weights file"));
            }
        }
        Ok(file)
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| werr("truncated weights file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}
