//! Binary parameter checkpoints with a JSON manifest alongside.
//!
//! Layout (little endian): magic `AMODCKPT`, `u32` format version, `u32`
//! tensor count, then per tensor a `u32` name length, the UTF-8 name and
//! `u32` rows and cols; finally every tensor's `f64` values in order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"AMODCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tensors: Vec<TensorEntry>,
    /// Free-form model description written by the caller.
    pub meta: serde_json::Value,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
    }
    for (_, t) in tensors {
        for x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = r.u32()? as usize;
    let mut heads = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        heads.push((name, rows, cols));
    }
    let mut out = Vec::with_capacity(heads.len());
    for (name, rows, cols) in heads {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
        let bytes = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::from_vec(rows, cols, data)));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint payload".into()));
    }
    Ok(out)
}

/// Writes `path` and its manifest `path.json`.
pub fn save(path: &Path, tensors: &[(String, Tensor)], meta: serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(tensors))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape(),
            })
            .collect(),
        meta,
    };
    fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode(&fs::read(path)?)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(manifest_path(path))?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::graph::ParamSet;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            ("a.w".into(), Tensor::from_vec(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300])),
            ("a.b".into(), Tensor::from_vec(1, 3, vec![0.1, 0.2, 0.3])),
        ]
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&p, &sample(), serde_json::json!({"hidden": 4})).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back.len(), 2);
        for ((n1, t1), (n2, t2)) in back.iter().zip(sample()) {
            assert_eq!(*n1, n2);
            let b1: Vec<u64> = t1.data.iter().map(|x| x.to_bits()).collect();
            let b2: Vec<u64> = t2.data.iter().map(|x| x.to_bits()).collect();
            assert_eq!(b1, b2);
        }
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.tensors[1].shape, [1, 3]);
        assert_eq!(m.meta["hidden"], 4);
    }

    #[test]
    fn corrupt_input_rejected() {
        let bytes = encode(&sample());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    #[test]
    fn shape_mismatch_rejected_on_load_into_params() {
        let mut ps = ParamSet::new(0);
        ps.push("a.w", Tensor::zeros(2, 2));
        ps.push("a.b", Tensor::zeros(1, 2));
        assert!(matches!(ps.load_values(sample()), Err(Error::Checkpoint(_))));
        let mut ok = ParamSet::new(0);
        ok.push("a.w", Tensor::zeros(2, 2));
        ok.push("a.b", Tensor::zeros(1, 3));
        ok.load_values(sample()).unwrap();
        assert_eq!(ok.values[1].data, vec![0.1, 0.2, 0.3]);
    }
}
