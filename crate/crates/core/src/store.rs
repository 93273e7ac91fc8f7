//! Named parameter storage and the `PADK` checkpoint format.
//!
//! Layout (little-endian): magic `PADK`, `u32` version (1), `u32` tensor
//! count, then per tensor `u32` name length, UTF-8 name, `u8` frozen flag,
//! `u32` rank, `u64` dims, `f32` payload. Tensors are written in name
//! order, so equal stores produce equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PADK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub tensor: Tensor,
    pub frozen: bool,
}

/// Named tensors split into a frozen set and a trainable set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, Entry>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, frozen: bool) {
        self.entries.insert(name.into(), Entry { tensor, frozen });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.tensor)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.frozen)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Entry)> {
        self.entries.iter()
    }

    pub fn names_with_prefix<'a>(
        &'a self,
        prefix: &'a str,
    ) -> impl Iterator<Item = &'a String> + 'a {
        self.entries.keys().filter(move |k| k.starts_with(prefix))
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.names_with_prefix(prefix).next().is_some()
    }

    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for (name, e) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                e.frozen = frozen;
            }
        }
    }

    pub fn freeze_all(&mut self) {
        self.set_frozen("", true);
    }

    /// Errors if any tensor under `prefix` is trainable.
    pub fn ensure_frozen(&self, prefix: &str) -> Result<()> {
        match self
            .entries
            .iter()
            .find(|(n, e)| n.starts_with(prefix) && !e.frozen)
        {
            Some((n, _)) => Err(Error::contract(format!("tensor {n} must be frozen"))),
            None => Ok(()),
        }
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| !e.frozen)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn subset(&self, prefix: &str) -> ParameterStore {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .map(|(n, e)| (n.clone(), e.clone()))
                .collect(),
        }
    }

    /// Copies every tensor of `other` into `self`, replacing same-named ones.
    pub fn merge(&mut self, other: &ParameterStore) {
        for (n, e) in &other.entries {
            self.entries.insert(n.clone(), e.clone());
        }
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.entries.retain(|n, _| !n.starts_with(prefix));
    }

    pub fn param_count(&self) -> usize {
        self.entries.values().map(|e| e.tensor.numel()).sum()
    }

    /// Rounds every value to `f32`, matching what a checkpoint round-trip
    /// would produce.
    pub fn round_to_f32(&mut self) {
        for e in self.entries.values_mut() {
            for v in e.tensor.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Hex SHA-256 of the checkpoint bytes of the tensors under `prefix`.
    pub fn hash_prefix(&self, prefix: &str) -> String {
        let bytes = self.subset(prefix).to_bytes();
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, e) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(u8::from(e.frozen));
            out.extend_from_slice(&(e.tensor.shape().len() as u32).to_le_bytes());
            for &d in e.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in e.tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic (want PADK)".into(),
            });
        }
        let version_at = r.pos;
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err_at(version_at, format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let name_at = r.pos;
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| r.err_at(name_at, "tensor name is not UTF-8"))?
                .to_string();
            let flag_at = r.pos;
            let frozen = match r.take(1)?[0] {
                0 => false,
                1 => true,
                other => return Err(r.err_at(flag_at, format!("frozen flag {other}"))),
            };
            let rank_at = r.pos;
            let rank = r.u32()? as usize;
            if rank == 0 || rank > 8 {
                return Err(r.err_at(rank_at, format!("rank {rank} unsupported")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u64()?;
                if d == 0 || d > u32::MAX as u64 {
                    return Err(r.err_at(r.pos - 8, format!("dimension {d} invalid")));
                }
                shape.push(d as usize);
            }
            let n: usize = shape.iter().product();
            let payload_at = r.pos;
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| r.err_at(payload_at, "payload too large"))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            if store.contains(&name) {
                return Err(r.err_at(name_at, format!("duplicate tensor {name}")));
            }
            store.insert(name, Tensor::new(shape, data)?, frozen);
        }
        if r.pos != bytes.len() {
            return Err(r.err_at(r.pos, "trailing bytes after last tensor"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err_at(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err_at(self.pos, format!("truncated: wanted {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert(
            "base.w",
            Tensor::from_rows(&[&[1.0, -2.5], &[0.1, 3.0]]),
            true,
        );
        s.insert(
            "dca.l0.q",
            Tensor::new(vec![3], vec![0.5, 0.25, -1.0]).unwrap(),
            false,
        );
        s
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let bytes = sample_store().to_bytes();
        let again = ParameterStore::from_bytes(&bytes).unwrap().to_bytes();
        assert_eq!(bytes, again);
    }

    #[test]
    fn empty_store_roundtrips() {
        let bytes = ParameterStore::new().to_bytes();
        assert_eq!(bytes.len(), 12);
        assert!(ParameterStore::from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn corrupt_magic_is_format_error() {
        let mut bytes = sample_store().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            ParameterStore::from_bytes(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample_store().to_bytes();
        let cut = &bytes[..bytes.len() - 3];
        match ParameterStore::from_bytes(cut) {
            Err(Error::Format { offset, .. }) => assert!(offset > 12),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_version_rejected() {
        let mut bytes = sample_store().to_bytes();
        bytes[4] = 2;
        assert!(matches!(
            ParameterStore::from_bytes(&bytes),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn frozen_partition_queries() {
        let s = sample_store();
        assert!(s.ensure_frozen("base.").is_ok());
        assert!(s.ensure_frozen("dca.").is_err());
        assert_eq!(s.trainable_names(), vec!["dca.l0.q".to_string()]);
        assert_ne!(s.hash_prefix("base."), s.hash_prefix("dca."));
    }
}
