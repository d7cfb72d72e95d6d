//! Self-describing checkpoint container.
//!
//! Layout: `b"CLCK"` magic, u32 LE format version, u32 LE header length, a
//! JSON header (model kind, architecture descriptor, normalization tag,
//! tensor table), then all tensors as little-endian f32 in table order.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CLCK";
pub const FORMAT_VERSION: u32 = 1;

/// Guard against hostile headers: no checkpoint here comes close to this.
const MAX_ELEMENTS: u64 = 1 << 26;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    /// Model kind tag, e.g. "classifier-cnn", "generator".
    pub kind: String,
    /// Architecture descriptor (kind-specific JSON).
    pub arch: serde_json::Value,
    pub normalization: Option<Normalization>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

pub fn encode(header: &CheckpointHeader, tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let header_json = serde_json::to_vec(header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let mut buf = [0u8; 4];
    LittleEndian::write_u32(&mut buf, FORMAT_VERSION);
    out.extend_from_slice(&buf);
    LittleEndian::write_u32(&mut buf, header_json.len() as u32);
    out.extend_from_slice(&buf);
    out.extend_from_slice(&header_json);
    for (_, t) in tensors {
        let data: Vec<f32> = t.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
        let mut bytes = vec![0u8; data.len() * 4];
        LittleEndian::write_f32_into(&data, &mut bytes);
        out.extend_from_slice(&bytes);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 {
        return Err(Error::MalformedFile("checkpoint shorter than its fixed header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::MalformedFile("bad checkpoint magic".into()));
    }
    let version = LittleEndian::read_u32(&bytes[4..8]);
    if version == 0 || version > FORMAT_VERSION {
        return Err(Error::MalformedFile(format!("unsupported checkpoint version {version}")));
    }
    let header_len = LittleEndian::read_u32(&bytes[8..12]) as usize;
    let body = &bytes[12..];
    if header_len > body.len() {
        return Err(Error::MalformedFile(format!(
            "header length {header_len} exceeds remaining {} bytes",
            body.len()
        )));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..header_len])
        .map_err(|e| Error::MalformedFile(format!("header json: {e}")))?;
    let mut payload = &body[header_len..];
    let mut total: u64 = 0;
    for entry in &header.tensors {
        let n = entry
            .shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| Error::MalformedFile("tensor shape overflow".into()))?;
        total = total
            .checked_add(n)
            .ok_or_else(|| Error::MalformedFile("tensor table overflow".into()))?;
        if total > MAX_ELEMENTS {
            return Err(Error::MalformedFile(format!("tensor table too large: {total} elements")));
        }
    }
    if payload.len() as u64 != total * 4 {
        return Err(Error::MalformedFile(format!(
            "payload is {} bytes, tensor table wants {}",
            payload.len(),
            total * 4
        )));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut data = vec![0f32; n];
        LittleEndian::read_f32_into(&payload[..n * 4], &mut data);
        payload = &payload[n * 4..];
        tensors.push((entry.name.clone(), entry.shape.clone(), data));
    }
    Ok(Checkpoint { header, tensors })
}

pub fn save(path: &Path, header: &CheckpointHeader, tensors: &[(String, Tensor)]) -> Result<()> {
    let bytes = encode(header, tensors)?;
    let tmp = path.with_extension("clck.tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

impl Checkpoint {
    pub fn tensor(&self, name: &str, dev: &Device) -> Result<Tensor> {
        let (_, shape, data) = self
            .tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| Error::MalformedFile(format!("checkpoint misses tensor {name}")))?;
        Ok(Tensor::from_vec(data.clone(), shape.as_slice(), dev)?)
    }

    pub fn tensors_with_prefix(&self, prefix: &str, dev: &Device) -> Result<Vec<Tensor>> {
        let mut out = Vec::new();
        for (name, shape, data) in &self.tensors {
            if name.starts_with(prefix) {
                out.push(Tensor::from_vec(data.clone(), shape.as_slice(), dev)?);
            }
        }
        Ok(out)
    }
}
