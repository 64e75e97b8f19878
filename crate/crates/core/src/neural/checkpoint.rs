//! Parameter checkpoint files.
//!
//! Layout: the 8-byte magic `PWCKPT01`, a little-endian `u64` header length,
//! a UTF-8 JSON header (`names`, `shapes`, `seed`, `config_hash`), a
//! little-endian `u64` value count, then the flat parameter vector as
//! little-endian `f64`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{NeuralError, ParamStore};

const MAGIC: &[u8; 8] = b"PWCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub names: Vec<String>,
    pub shapes: Vec<[usize; 2]>,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub values: Vec<f64>,
}

fn corrupt(msg: impl Into<String>) -> NeuralError {
    NeuralError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, seed: u64, config_hash: &str) -> Self {
        let header = CheckpointHeader {
            names: store.entries().iter().map(|e| e.name.clone()).collect(),
            shapes: store.entries().iter().map(|e| [e.rows, e.cols]).collect(),
            seed,
            config_hash: config_hash.to_string(),
        };
        Self { header, values: store.values().to_vec() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(24 + header.len() + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NeuralError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| corrupt(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NeuralError> {
        let take_u64 = |at: usize| -> Result<u64, NeuralError> {
            let b = bytes.get(at..at + 8).ok_or_else(|| corrupt("truncated"))?;
            Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
        };
        if bytes.get(..8) != Some(MAGIC.as_slice()) {
            return Err(corrupt("bad magic"));
        }
        let hlen = take_u64(8)? as usize;
        let hbytes = bytes.get(16..16 + hlen).ok_or_else(|| corrupt("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(hbytes).map_err(|e| corrupt(e.to_string()))?;
        let count = take_u64(16 + hlen)? as usize;
        let start = 24 + hlen;
        let body = bytes.get(start..start + 8 * count).ok_or_else(|| corrupt("truncated values"))?;
        if start + 8 * count != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let expected: usize = header.shapes.iter().map(|s| s[0] * s[1]).sum();
        if expected != count || header.names.len() != header.shapes.len() {
            return Err(corrupt("header does not match value count"));
        }
        Ok(Self { header, values })
    }

    /// Copies the values into `store` after checking names and shapes.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<(), NeuralError> {
        let entries = store.entries();
        if entries.len() != self.header.names.len() {
            return Err(corrupt(format!("{} arrays in checkpoint, model has {}", self.header.names.len(), entries.len())));
        }
        for (e, (name, shape)) in entries.iter().zip(self.header.names.iter().zip(&self.header.shapes)) {
            if &e.name != name || [e.rows, e.cols] != *shape {
                return Err(corrupt(format!("array {name} {shape:?} does not match {} [{}, {}]", e.name, e.rows, e.cols)));
            }
        }
        store.set_values(self.values.clone());
        Ok(())
    }
}
