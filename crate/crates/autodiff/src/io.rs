//! Tensor blobs and checkpoint directories.
//!
//! A blob is `rank: u64`, `dims: [u64; rank]`, then the row-major `f64`
//! payload, all little-endian. A checkpoint directory holds one blob per
//! named tensor plus `manifest.toml` listing names, files and shapes, with an
//! optional free-form `meta` table for the caller.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.toml";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TensorError + '_ {
    move |source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn encode_blob(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 * (1 + t.rank() + t.numel()));
    buf.extend_from_slice(&(t.rank() as u64).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_blob(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |reason: String| TensorError::Blob {
        path: path.to_path_buf(),
        reason,
    };
    let word = |i: usize| -> Result<[u8; 8]> {
        bytes
            .get(i * 8..i * 8 + 8)
            .map(|s| s.try_into().expect("8-byte slice"))
            .ok_or_else(|| bad(format!("truncated at word {i}")))
    };
    let rank = u64::from_le_bytes(word(0)?) as usize;
    if rank == 0 || rank > 8 {
        return Err(bad(format!("unsupported rank {rank}")));
    }
    let shape: Vec<usize> = (1..=rank)
        .map(|i| word(i).map(|w| u64::from_le_bytes(w) as usize))
        .collect::<Result<_>>()?;
    let numel: usize = shape.iter().product();
    let expected = 8 * (1 + rank + numel);
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let data = (0..numel)
        .map(|i| f64::from_le_bytes(word(1 + rank + i).expect("length checked")))
        .collect();
    Tensor::new(data, &shape)
}

pub fn save_blob(t: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_blob(t)).map_err(io_err(path))
}

pub fn load_blob(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_blob(&bytes, path)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    #[serde(default)]
    pub meta: toml::Table,
    pub tensors: Vec<ManifestEntry>,
}

fn blob_file_name(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '.' })
        .collect();
    format!("{safe}.bin")
}

/// Writes every named tensor and the manifest into `dir` (created if needed).
pub fn save_checkpoint(dir: &Path, tensors: &[(String, Tensor)], meta: toml::Table) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let file = blob_file_name(name);
        save_blob(t, &dir.join(&file))?;
        entries.push(ManifestEntry {
            name: name.clone(),
            file,
            shape: t.shape().to_vec(),
        });
    }
    let manifest = Manifest { meta, tensors: entries };
    let path = dir.join(MANIFEST_FILE);
    let text = toml::to_string(&manifest).map_err(|e| TensorError::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    fs::write(&path, text).map_err(io_err(&path))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path: PathBuf = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    toml::from_str(&text).map_err(|e| TensorError::Manifest {
        path,
        reason: e.to_string(),
    })
}

/// Loads every tensor listed in the manifest, in manifest order.
pub fn load_checkpoint(dir: &Path) -> Result<(Manifest, Vec<(String, Tensor)>)> {
    let manifest = read_manifest(dir)?;
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let path = dir.join(&e.file);
        let t = load_blob(&path)?;
        if t.shape() != e.shape.as_slice() {
            return Err(TensorError::Blob {
                path,
                reason: format!("shape {:?} disagrees with manifest {:?}", t.shape(), e.shape),
            });
        }
        out.push((e.name.clone(), t));
    }
    Ok((manifest, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_layout_is_little_endian_header_then_payload() {
        let t = Tensor::new(vec![1.5, -2.0], &[2, 1]).unwrap();
        let bytes = encode_blob(&t);
        assert_eq!(bytes.len(), 8 * 5);
        assert_eq!(&bytes[0..8], &2u64.to_le_bytes());
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &1.5f64.to_le_bytes());
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let t = Tensor::new(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let bytes = encode_blob(&t);
        let err = decode_blob(&bytes[..bytes.len() - 1], Path::new("x.bin")).unwrap_err();
        assert!(matches!(err, TensorError::Blob { .. }));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::new(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], &[2, 3]).unwrap();
        let b = Tensor::scalar(-7.25);
        let mut meta = toml::Table::new();
        meta.insert("note".into(), toml::Value::String("hi".into()));
        save_checkpoint(
            dir.path(),
            &[("enc.w".into(), a.clone()), ("head/b".into(), b.clone())],
            meta.clone(),
        )
        .unwrap();
        let (manifest, loaded) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(manifest.meta, meta);
        assert_eq!(loaded[0].0, "enc.w");
        assert_eq!(loaded[0].1.data(), a.data());
        assert_eq!(loaded[1].1.shape(), &[1]);
        assert_eq!(loaded[1].1.item(), -7.25);
    }
}
