//! Reader/writer for the safetensors container layout.
//!
//! Layout: 8-byte little-endian header length, a JSON header mapping tensor
//! names to `{dtype, shape, data_offsets}`, then the raw data section.
//! Only F32 tensors are accepted. Offsets must tile the data section
//! exactly; anything partial or truncated is rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{ModelError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// Parse a safetensors byte buffer into named tensors.
pub fn parse(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    if bytes.len() < 8 {
        return Err(ModelError::Format("file shorter than header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let data_start = 8usize
        .checked_add(header_len)
        .ok_or_else(|| ModelError::Format("header length overflow".into()))?;
    if data_start > bytes.len() {
        return Err(ModelError::Format(format!(
            "declared header length {header_len} exceeds file size {}",
            bytes.len()
        )));
    }
    let header: BTreeMap<String, serde_json::Value> =
        serde_json::from_slice(&bytes[8..data_start])
            .map_err(|e| ModelError::Format(format!("invalid header json: {e}")))?;

    let data = &bytes[data_start..];
    let mut tensors = BTreeMap::new();
    let mut spans: Vec<(usize, usize)> = Vec::new();

    for (name, value) in header {
        if name == "__metadata__" {
            continue;
        }
        let entry: HeaderEntry = serde_json::from_value(value)
            .map_err(|e| ModelError::Format(format!("bad entry for `{name}`: {e}")))?;
        if entry.dtype != "F32" {
            return Err(ModelError::Format(format!(
                "tensor `{name}` has unsupported dtype {}",
                entry.dtype
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let [start, end] = entry.data_offsets;
        if end < start || end > data.len() {
            return Err(ModelError::Format(format!(
                "tensor `{name}` offsets [{start}, {end}) out of bounds (data len {})",
                data.len()
            )));
        }
        if end - start != numel * 4 {
            return Err(ModelError::Format(format!(
                "tensor `{name}` span {} bytes but shape {:?} needs {}",
                end - start,
                entry.shape,
                numel * 4
            )));
        }
        let mut values = Vec::with_capacity(numel);
        for chunk in data[start..end].chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        spans.push((start, end));
        tensors.insert(name, Tensor::new(entry.shape, values)?);
    }

    // The data section must be exactly tiled by the declared spans.
    spans.sort_unstable();
    let mut cursor = 0usize;
    for (start, end) in spans {
        if start != cursor {
            return Err(ModelError::Format(format!(
                "data section has a gap or overlap at byte {cursor}"
            )));
        }
        cursor = end;
    }
    if cursor != data.len() {
        return Err(ModelError::Format(format!(
            "data section has {} trailing bytes past declared tensors",
            data.len() - cursor
        )));
    }

    Ok(tensors)
}

/// Read and parse a safetensors file.
pub fn read_file(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let bytes =
        std::fs::read(path).map_err(|e| ModelError::io(path.display().to_string(), e))?;
    parse(&bytes)
}

/// Serialize named tensors into safetensors bytes. Names are laid out in
/// sorted order so output is byte-deterministic.
pub fn serialize(tensors: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let mut header = String::from("{");
    let mut data: Vec<u8> = Vec::new();
    let mut first = true;
    for (name, t) in tensors {
        let start = data.len();
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
        let end = data.len();
        if !first {
            header.push(',');
        }
        first = false;
        let shape = serde_json::to_string(t.shape()).unwrap();
        header.push_str(&format!(
            "\"{name}\":{{\"dtype\":\"F32\",\"shape\":{shape},\"data_offsets\":[{start},{end}]}}"
        ));
    }
    header.push('}');

    let mut out = Vec::with_capacity(8 + header.len() + data.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&data);
    out
}

/// Write tensors to a safetensors file.
pub fn write_file(path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    std::fs::write(path, serialize(tensors))
        .map_err(|e| ModelError::io(path.display().to_string(), e))
}
