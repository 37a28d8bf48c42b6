//! Versioned binary container for named `f64` tensors.
//!
//! Layout (all integers little-endian):
//!
//! | field            | encoding                                         |
//! |------------------|--------------------------------------------------|
//! | magic            | 8 bytes, `FSEGARCH`                              |
//! | version          | `u32`, currently 1                               |
//! | descriptor       | `u32` byte length, then compact JSON, keys sorted |
//! | section count    | `u32`                                            |
//! | each section     | `u32` name length, UTF-8 name, `u32` tensor count |
//! | each tensor      | `u32` name length, UTF-8 name, `u32` rank, rank x `u64` dims, `f64` data |
//! | checksum         | 32-byte SHA-256 of every preceding byte          |
//!
//! Sections and tensors are written in name order, so equal contents give
//! equal bytes. Weight archives hold one `weights` section; training
//! checkpoints add an `optimizer` section.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FSEGARCH";
pub const VERSION: u32 = 1;
pub const WEIGHTS: &str = "weights";
pub const OPTIMIZER: &str = "optimizer";

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub descriptor: Value,
    pub sections: BTreeMap<String, BTreeMap<String, Tensor>>,
}

impl Archive {
    pub fn new(descriptor: Value) -> Self {
        Self {
            descriptor,
            sections: BTreeMap::new(),
        }
    }

    pub fn with_section(mut self, name: &str, tensors: BTreeMap<String, Tensor>) -> Self {
        self.sections.insert(name.to_string(), tensors);
        self
    }

    pub fn section(&self, name: &str) -> Result<&BTreeMap<String, Tensor>> {
        self.sections
            .get(name)
            .ok_or_else(|| NnError::Archive(format!("missing section {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let desc = serde_json::to_vec(&self.descriptor).expect("json value serializes");
        put_bytes(&mut out, &desc);
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, tensors) in &self.sections {
            put_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
            for (tname, t) in tensors {
                put_bytes(&mut out, tname.as_bytes());
                out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                out.extend_from_slice(&t.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(NnError::Archive("bad magic".into()));
        }
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(NnError::Archive("truncated archive".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Archive(format!("unsupported archive version {version}")));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(NnError::Archive("checksum mismatch".into()));
        }
        let desc = r.bytes()?;
        let descriptor: Value = serde_json::from_slice(desc)
            .map_err(|e| NnError::Archive(format!("bad descriptor: {e}")))?;
        let mut sections = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let mut tensors = BTreeMap::new();
            for _ in 0..r.u32()? {
                let tname = r.string()?;
                let rank = r.u32()? as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(r.u64()? as usize);
                }
                let n: usize = shape.iter().product();
                let raw = r.take(n.checked_mul(8).ok_or_else(truncated)?)?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                tensors.insert(tname, Tensor::new(&shape, data));
            }
            sections.insert(name, tensors);
        }
        if r.pos != body.len() {
            return Err(NnError::Archive("trailing bytes before checksum".into()));
        }
        Ok(Self { descriptor, sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

fn truncated() -> NnError {
    NnError::Archive("truncated archive".into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| NnError::Archive("name is not UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Archive {
        let mut w = BTreeMap::new();
        w.insert("b".into(), Tensor::new(&[2], vec![1.5, -2.0]));
        w.insert("a.weight".into(), Tensor::new(&[2, 1, 1], vec![0.25, 3.0]));
        Archive::new(serde_json::json!({"kind": "conv", "widths": [8, 16]})).with_section(WEIGHTS, w)
    }

    #[test]
    fn roundtrip_is_exact_and_stable() {
        let a = sample();
        let bytes = a.to_bytes();
        let back = Archive::from_bytes(&bytes).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(Archive::from_bytes(&bytes), Err(NnError::Archive(m)) if m.contains("checksum")));
    }

    #[test]
    fn bad_magic_version_and_truncation() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Archive::from_bytes(&bad).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(Archive::from_bytes(&v2), Err(NnError::Archive(m)) if m.contains("version")));
        assert!(Archive::from_bytes(&bytes[..20]).is_err());
    }
}
