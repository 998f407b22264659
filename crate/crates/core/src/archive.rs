//! Named-tensor archive (safetensors layout): an 8-byte little-endian header
//! length, a UTF-8 JSON header mapping tensor names to dtype, shape and byte
//! offsets (plus an optional `__metadata__` string map), then the raw
//! little-endian buffers.
//!
//! Reading goes through the `safetensors` crate. Writing is done here so the
//! header is emitted in sorted key order and the bytes are reproducible.

use std::collections::BTreeMap;

use safetensors::{Dtype, SafeTensors};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

/// Parsed view over an archive buffer.
pub struct ArchiveReader<'a> {
    tensors: SafeTensors<'a>,
    metadata: BTreeMap<String, String>,
}

impl<'a> ArchiveReader<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self> {
        let tensors = SafeTensors::deserialize(bytes)
            .map_err(|e| Error::Load(format!("malformed tensor archive: {e}")))?;
        let (_, meta) = SafeTensors::read_metadata(bytes)
            .map_err(|e| Error::Load(format!("malformed tensor archive: {e}")))?;
        let metadata = meta
            .metadata()
            .as_ref()
            .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
            .unwrap_or_default();
        Ok(Self { tensors, metadata })
    }

    pub fn names(&self) -> Vec<&str> {
        let mut names = self.tensors.names();
        names.sort_unstable();
        names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.tensor(name).is_ok()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn shape(&self, name: &str) -> Result<Vec<usize>> {
        Ok(self.view(name)?.shape().to_vec())
    }

    /// Loads a floating-point tensor widened (or narrowed, for F64) to `f32`.
    pub fn tensor_f32(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let view = self.view(name)?;
        let raw = view.data();
        let data: Vec<f32> = match view.dtype() {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
            Dtype::F16 => raw
                .chunks_exact(2)
                .map(|b| half::f16::from_le_bytes([b[0], b[1]]).to_f32())
                .collect(),
            Dtype::BF16 => raw
                .chunks_exact(2)
                .map(|b| half::bf16::from_le_bytes([b[0], b[1]]).to_f32())
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")) as f32)
                .collect(),
            other => {
                return Err(Error::Load(format!(
                    "tensor {name} has non-float dtype {other:?}"
                )))
            }
        };
        Ok((view.shape().to_vec(), data))
    }

    pub fn tensor_i64(&self, name: &str) -> Result<(Vec<usize>, Vec<i64>)> {
        let view = self.view(name)?;
        let raw = view.data();
        let data = match view.dtype() {
            Dtype::I64 => raw
                .chunks_exact(8)
                .map(|b| i64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect(),
            Dtype::I32 => raw
                .chunks_exact(4)
                .map(|b| i64::from(i32::from_le_bytes(b.try_into().expect("4-byte chunk"))))
                .collect(),
            other => {
                return Err(Error::Load(format!(
                    "tensor {name} has non-integer dtype {other:?}"
                )))
            }
        };
        Ok((view.shape().to_vec(), data))
    }

    fn view(&self, name: &str) -> Result<safetensors::tensor::TensorView<'a>> {
        self.tensors
            .tensor(name)
            .map_err(|_| Error::Load(format!("tensor {name} missing from archive")))
    }
}

struct Entry {
    dtype: &'static str,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

/// Accumulates tensors and metadata, then serializes deterministically.
#[derive(Default)]
pub struct ArchiveWriter {
    tensors: BTreeMap<String, Entry>,
    metadata: BTreeMap<String, String>,
}

impl ArchiveWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_f32(&mut self, name: &str, shape: &[usize], data: &[f32]) -> Result<&mut Self> {
        self.add(name, "F32", shape, data.len(), data.iter().flat_map(|v| v.to_le_bytes()))
    }

    pub fn add_i64(&mut self, name: &str, shape: &[usize], data: &[i64]) -> Result<&mut Self> {
        self.add(name, "I64", shape, data.len(), data.iter().flat_map(|v| v.to_le_bytes()))
    }

    pub fn metadata(&mut self, key: &str, value: impl Into<String>) -> &mut Self {
        self.metadata.insert(key.to_owned(), value.into());
        self
    }

    fn add(
        &mut self,
        name: &str,
        dtype: &'static str,
        shape: &[usize],
        len: usize,
        bytes: impl Iterator<Item = u8>,
    ) -> Result<&mut Self> {
        let expected: usize = shape.iter().product();
        if expected != len {
            return Err(Error::shape(name, shape, &[len]));
        }
        if name == "__metadata__" {
            return Err(Error::Input("reserved tensor name __metadata__".into()));
        }
        self.tensors.insert(
            name.to_owned(),
            Entry {
                dtype,
                shape: shape.to_vec(),
                bytes: bytes.collect(),
            },
        );
        Ok(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = Map::new();
        if !self.metadata.is_empty() {
            header.insert("__metadata__".into(), json!(self.metadata));
        }
        let mut offset = 0usize;
        for (name, entry) in &self.tensors {
            let end = offset + entry.bytes.len();
            header.insert(
                name.clone(),
                json!({ "dtype": entry.dtype, "shape": entry.shape, "data_offsets": [offset, end] }),
            );
            offset = end;
        }
        let mut header = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
        while header.len() % 8 != 0 {
            header.push(b' ');
        }
        let mut out = Vec::with_capacity(8 + header.len() + offset);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for entry in self.tensors.values() {
            out.extend_from_slice(&entry.bytes);
        }
        out
    }
}
