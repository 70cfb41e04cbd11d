//! Artifact writers: JSONL streams, PGM rasters and content hashes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// SHA-256 of the canonical JSON form of `value`: object keys sorted, no
/// whitespace, so field order in the source never changes the hash.
pub fn canonical_hash<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(hex::encode(Sha256::digest(serde_json::to_string(&v)?.as_bytes())))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Writes files below a root directory and remembers each file's hash under
/// its root-relative path. Without a root only the hashes are kept.
#[derive(Debug, Default)]
pub struct ArtifactDir {
    pub root: Option<PathBuf>,
    pub hashes: BTreeMap<String, String>,
}

impl ArtifactDir {
    pub fn create(root: Option<&Path>) -> Result<Self> {
        if let Some(r) = root {
            fs::create_dir_all(r)?;
        }
        Ok(ArtifactDir {
            root: root.map(Path::to_path_buf),
            hashes: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<String> {
        if let Some(root) = &self.root {
            let path = root.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, bytes)?;
        }
        self.hashes.insert(rel.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(rel.to_string())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<String> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(rel, s.as_bytes())
    }

    pub fn write_jsonl<T: Serialize>(&mut self, rel: &str, records: &[T]) -> Result<String> {
        self.write(rel, &jsonl(records)?)
    }
}

pub fn jsonl<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Binary 8-bit PGM of a mask (255 = set), row 0 first.
pub fn pgm_mask(mask: &Array2<bool>) -> Vec<u8> {
    let (h, w) = mask.dim();
    let mut out = Vec::with_capacity(h * w + 32);
    write!(out, "P5\n{w} {h}\n255\n").expect("in-memory write");
    out.extend(mask.iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Binary 16-bit PGM of instance ids (big-endian samples), row 0 first.
pub fn pgm_ids(ids: &Array2<u32>) -> Result<Vec<u8>> {
    let (h, w) = ids.dim();
    let mut out = Vec::with_capacity(2 * h * w + 32);
    write!(out, "P5\n{w} {h}\n65535\n").expect("in-memory write");
    for &v in ids.iter() {
        let v = u16::try_from(v).map_err(|_| Error::Format(format!("instance id {v} exceeds 16 bits")))?;
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

/// Parse a binary PGM written by [`pgm_mask`] or [`pgm_ids`].
pub fn read_pgm(bytes: &[u8]) -> Result<Array2<u32>> {
    let bad = || Error::Format("malformed PGM".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let max: u32 = fields[3].parse().map_err(|_| bad())?;
    let data = bytes.get(pos..).ok_or_else(bad)?;
    let vals: Vec<u32> = if max < 256 {
        data.iter().map(|&b| u32::from(b)).collect()
    } else {
        data.chunks_exact(2).map(|c| u32::from(u16::from_be_bytes([c[0], c[1]]))).collect()
    };
    Array2::from_shape_vec((h, w), vals).map_err(|_| bad())
}
