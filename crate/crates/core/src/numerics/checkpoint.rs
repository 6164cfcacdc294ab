//! Named-tensor file: an 8-byte little-endian header length, a JSON header
//! describing every tensor, then the raw little-endian payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{Real, Tensor};

const FORMAT: &str = "emkken-tensors";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Byte range `[begin, end)` within the payload.
    pub offsets: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    tensors: Vec<CheckpointEntry>,
}

pub fn encode_checkpoint<T: Real>(tensors: &[(&str, &Tensor<T>)]) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for &(name, t) in tensors {
        let begin = payload.len();
        for &v in t.data() {
            v.write_le(&mut payload);
        }
        entries.push(CheckpointEntry {
            name: name.to_string(),
            dtype: T::DTYPE.to_string(),
            shape: t.shape().to_vec(),
            offsets: [begin, payload.len()],
        });
    }
    let header = serde_json::to_vec(&Header {
        format: FORMAT.into(),
        version: VERSION,
        tensors: entries,
    })?;
    let mut out = Vec::with_capacity(8 + header.len() + payload.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decodes tensors stored as either dtype, converting to `T`.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let bad = |m: &str| Error::Schema(format!("checkpoint: {m}"));
    if bytes.len() < 8 {
        return Err(bad("truncated header length"));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(bad(&format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let payload = &bytes[8 + hlen..];
    let mut out = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let width = match e.dtype.as_str() {
            "F32" => 4,
            "F64" => 8,
            other => return Err(bad(&format!("unknown dtype {other}"))),
        };
        let raw = payload
            .get(e.offsets[0]..e.offsets[1])
            .ok_or_else(|| bad(&format!("tensor {} out of bounds", e.name)))?;
        if raw.len() % width != 0 {
            return Err(bad(&format!("tensor {} has ragged payload", e.name)));
        }
        let data: Vec<T> = raw
            .chunks_exact(width)
            .map(|c| {
                if width == 4 {
                    T::lit(f32::read_le(c) as f64)
                } else {
                    T::lit(f64::read_le(c))
                }
            })
            .collect();
        out.push((e.name, Tensor::new(&e.shape, data)?));
    }
    Ok(out)
}

pub fn write_checkpoint<T: Real>(path: &Path, tensors: &[(&str, &Tensor<T>)]) -> Result<()> {
    let bytes = encode_checkpoint(tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let n = values.len();
            let a = Tensor::new(&[n], values.clone()).unwrap();
            let b = Tensor::new(&[1, n], values.iter().map(|v| v * 0.5).collect()).unwrap();
            let bytes = encode_checkpoint(&[("a", &a), ("layer.b", &b)]).unwrap();
            let back: Vec<(String, Tensor<f64>)> = decode_checkpoint(&bytes).unwrap();
            prop_assert_eq!(&back[0].0, "a");
            prop_assert_eq!(&back[0].1, &a);
            prop_assert_eq!(&back[1].1, &b);
        }
    }

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let bytes = encode_checkpoint(&[("w", &t)]).unwrap();
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + hlen]).unwrap();
        assert_eq!(header["tensors"][0]["dtype"], "F32");
        assert_eq!(header["tensors"][0]["offsets"], serde_json::json!([0, 8]));
        assert_eq!(&bytes[8 + hlen..8 + hlen + 4], &1.0f32.to_le_bytes());
    }
}
