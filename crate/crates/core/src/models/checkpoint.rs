use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::Model;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor_core::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CGRU";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    dtype: String,
    manifest: Vec<ManifestEntry>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl<T: Scalar> Model<T> {
    /// Serializes the model into bytes: magic, little-endian version,
    /// little-endian header length, JSON header, parameter blob.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let manifest = self
            .params()
            .iter()
            .map(|p| {
                let nbytes = (p.value.len() * T::BYTES) as u64;
                let e = ManifestEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    offset,
                    nbytes,
                };
                offset += nbytes;
                e
            })
            .collect();
        let header = Header {
            config: self.config().clone(),
            dtype: T::DTYPE.to_string(),
            manifest,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params() {
            for &v in p.value.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes()?)?;
        w.flush()?;
        Ok(())
    }

    /// Parses a checkpoint; values stored in the other precision are cast.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(format_err("missing CGRU magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(format_err(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let blob_start = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| format_err("header extends past the end of the file"))?;
        let header: Header = serde_json::from_slice(&bytes[16..blob_start])
            .map_err(|e| format_err(format!("unreadable header: {e}")))?;
        let blob = &bytes[blob_start..];
        let width = match header.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(format_err(format!("unknown dtype {other:?}"))),
        };

        let mut model = Model::<T>::zeros(header.config.clone())
            .map_err(|e| format_err(format!("header holds an invalid configuration: {e}")))?;
        if model.params().len() != header.manifest.len() {
            return Err(format_err(format!(
                "manifest lists {} tensors, the architecture has {}",
                header.manifest.len(),
                model.params().len()
            )));
        }
        let mut expected_offset = 0u64;
        for (entry, slot) in header.manifest.iter().zip(model.params_mut()) {
            if entry.name != slot.name || entry.shape != slot.value.shape() {
                return Err(format_err(format!(
                    "manifest entry {} {:?} disagrees with the architecture ({} {:?})",
                    entry.name,
                    entry.shape,
                    slot.name,
                    slot.value.shape()
                )));
            }
            let len = slot.value.len();
            if entry.offset != expected_offset || entry.nbytes != (len * width) as u64 {
                return Err(format_err(format!("manifest byte range of {} is not contiguous", entry.name)));
            }
            let start = entry.offset as usize;
            let end = start + entry.nbytes as usize;
            if end > blob.len() {
                return Err(format_err(format!("parameter blob truncated inside {}", entry.name)));
            }
            let raw = &blob[start..end];
            let values: Vec<T> = if width == T::BYTES {
                raw.chunks_exact(width).map(T::read_le).collect()
            } else if width == 4 {
                raw.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect()
            } else {
                raw.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect()
            };
            slot.value = Tensor::new(entry.shape.clone(), values)?;
            expected_offset = end as u64;
        }
        if expected_offset != blob.len() as u64 {
            return Err(format_err(format!(
                "parameter blob has {} bytes, manifest covers {expected_offset}",
                blob.len()
            )));
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
