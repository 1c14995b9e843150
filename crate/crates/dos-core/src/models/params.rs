//! Named parameter storage, checkpoints, and hashing.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::ModelError;
use crate::autodiff::{Tape, Tensor, Var};

const MAGIC: &[u8; 8] = b"DOSCKPT\x01";

/// Flat, ordered store of named parameter tensors. Iteration order is
/// insertion order everywhere (updates, hashing, serialization), which
/// keeps training and checkpoints deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let idx = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.index.insert(name.to_string(), idx);
        idx
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.lookup(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    /// Insert every parameter as a tape leaf, in store order.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.bind_where(tape, |_| true)
    }

    /// Insert the parameters whose name satisfies the predicate. Layers
    /// that reference an unbound parameter will panic, which flags an
    /// architecture/freezing mismatch early.
    pub fn bind_where(&self, tape: &mut Tape, pred: impl Fn(&str) -> bool) -> BoundParams {
        BoundParams {
            vars: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| {
                    if pred(n) {
                        Some(tape.leaf(t.clone()))
                    } else {
                        None
                    }
                })
                .collect(),
        }
    }

    /// SHA-256 over names, shapes, and little-endian values in store
    /// order. Equal hash means bit-identical parameters.
    pub fn hash_hex(&self) -> String {
        self.hash_prefix("")
    }

    /// Hash restricted to parameters whose name starts with `prefix`.
    pub fn hash_prefix(&self, prefix: &str) -> String {
        let mut hasher = Sha256::new();
        for (name, tensor) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for d in tensor.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in tensor.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Versioned binary checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&(self.len() as u32).to_le_bytes())?;
        for (name, tensor) in self.iter() {
            let bytes = name.as_bytes();
            out.write_all(&(bytes.len() as u32).to_le_bytes())?;
            out.write_all(bytes)?;
            out.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
            for d in tensor.shape() {
                out.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in tensor.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ParamStore, ModelError> {
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::Checkpoint(format!(
                "bad magic/version in {}",
                path.display()
            )));
        }
        let count = read_u32(&mut input)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u32(&mut input)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            input.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
            let rank = read_u32(&mut input)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut input)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                input.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            store.add(
                &name,
                Tensor::new(shape, data).map_err(|e| ModelError::Checkpoint(e.to_string()))?,
            );
        }
        Ok(store)
    }

    /// Check that `name` exists with the given shape; used when attaching
    /// a model architecture to a loaded checkpoint.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<usize, ModelError> {
        match self.lookup(name) {
            Some(idx) if self.tensors[idx].shape() == shape => Ok(idx),
            Some(idx) => Err(ModelError::Checkpoint(format!(
                "parameter {name}: expected shape {shape:?}, checkpoint has {:?}",
                self.tensors[idx].shape()
            ))),
            None => Err(ModelError::Checkpoint(format!(
                "parameter {name} missing from checkpoint"
            ))),
        }
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, ModelError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Tape handles for bound parameters of a store, aligned by index.
pub struct BoundParams {
    vars: Vec<Option<Var>>,
}

impl BoundParams {
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx].expect("parameter not bound to this tape")
    }

    pub fn get(&self, idx: usize) -> Option<Var> {
        self.vars[idx]
    }
}
