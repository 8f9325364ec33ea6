//! Binary weight files: magic, version, JSON header, aligned f32 payload.
//!
//! ```text
//! "RTSR" | version u32 LE (major << 16 | minor) | header_len u64 LE | header | pad to 16 | payload
//! ```
//! Manifest offsets are relative to the payload start.

use std::path::Path;

use rtsr_core::{Shape, Tensor};
use rtsr_zoo::{build, Mode, ModelGraph, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub const MAGIC: [u8; 4] = *b"RTSR";
pub const VERSION_MAJOR: u16 = 1;
/// 1.1 added the `mode` header field; 1.0 files are deploy-form.
pub const VERSION_MINOR: u16 = 1;
pub const PAYLOAD_ALIGN: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    pub offset: u64,
}

impl TensorEntry {
    fn bytes(&self) -> u64 {
        self.shape.iter().product::<usize>() as u64 * 4
    }
}

fn default_mode() -> String {
    Mode::Deploy.as_str().to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub spec: ModelSpec,
    #[serde(default = "default_mode")]
    pub mode: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Serialize)]
struct HeaderV1_0<'a> {
    spec: &'a ModelSpec,
    tensors: &'a [TensorEntry],
}

fn padding(len: usize) -> usize {
    (PAYLOAD_ALIGN - len % PAYLOAD_ALIGN) % PAYLOAD_ALIGN
}

/// Serializes with an explicit version (older minors are written for fixtures and tests).
pub fn encode_with_version(model: &ModelGraph, major: u16, minor: u16) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut offset = 0u64;
    for (name, t) in model.params() {
        let s = t.shape();
        let entry = TensorEntry {
            name,
            shape: [s.n, s.c, s.h, s.w],
            offset,
        };
        offset += entry.bytes();
        tensors.push(entry);
    }
    let header = Header {
        spec: model.spec().clone(),
        mode: model.mode().as_str().to_string(),
        tensors,
    };
    let header = if (major, minor) == (1, 0) {
        // 1.0 had no mode field and only stored deploy-form weights
        if model.mode() != Mode::Deploy {
            return Err(BenchError::UnsupportedVersion { major, minor });
        }
        serde_json::to_vec(&HeaderV1_0 {
            spec: &header.spec,
            tensors: &header.tensors,
        })?
    } else {
        serde_json::to_vec(&header)?
    };
    let mut out = Vec::with_capacity(16 + header.len() + PAYLOAD_ALIGN + offset as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(((major as u32) << 16) | minor as u32).to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.resize(out.len() + padding(out.len()), 0);
    for (_, t) in model.params() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn encode(model: &ModelGraph) -> Result<Vec<u8>> {
    encode_with_version(model, VERSION_MAJOR, VERSION_MINOR)
}

fn take<'a>(bytes: &'a [u8], at: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    bytes
        .get(at..at.checked_add(len).ok_or_else(|| BenchError::Truncated(what.into()))?)
        .ok_or_else(|| BenchError::Truncated(format!("{what} needs bytes {at}..{}, file has {}", at + len, bytes.len())))
}

/// Parses and validates the header without building the model.
pub fn read_header(bytes: &[u8]) -> Result<(Header, usize)> {
    let magic: [u8; 4] = take(bytes, 0, 4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(BenchError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(take(bytes, 4, 4, "version")?.try_into().expect("4 bytes"));
    let (major, minor) = ((version >> 16) as u16, (version & 0xffff) as u16);
    if major != VERSION_MAJOR || minor > VERSION_MINOR {
        return Err(BenchError::UnsupportedVersion { major, minor });
    }
    let hlen = u64::from_le_bytes(take(bytes, 8, 8, "header length")?.try_into().expect("8 bytes"));
    let hlen = usize::try_from(hlen).map_err(|_| BenchError::Truncated("header length".into()))?;
    let header: Header = serde_json::from_slice(take(bytes, 16, hlen, "header")?)?;
    let payload = 16 + hlen + padding(16 + hlen);
    let mut end = 0u64;
    for (i, t) in header.tensors.iter().enumerate() {
        if t.offset != end {
            return Err(BenchError::Manifest(format!(
                "tensor {} ({}) starts at {} but the previous one ends at {end}",
                i, t.name, t.offset
            )));
        }
        end = t.offset + t.bytes();
    }
    let available = bytes.len().saturating_sub(payload) as u64;
    if available < end {
        return Err(BenchError::Truncated(format!("payload has {available} bytes, manifest needs {end}")));
    }
    if available > end {
        return Err(BenchError::Manifest(format!("{} trailing bytes after the last tensor", available - end)));
    }
    Ok((header, payload))
}

pub fn decode(bytes: &[u8]) -> Result<ModelGraph> {
    let (header, payload) = read_header(bytes)?;
    let mode = match header.mode.as_str() {
        "train" => Mode::Train,
        "deploy" => Mode::Deploy,
        other => return Err(BenchError::SpecMismatch(format!("unknown mode {other:?}"))),
    };
    let mut model = build(&header.spec, mode, 0)?;
    let expected: Vec<(String, Shape)> = model.params().iter().map(|(n, t)| (n.clone(), t.shape())).collect();
    let got: Vec<(String, Shape)> = header.tensors.iter().map(|t| (t.name.clone(), Shape::from(t.shape))).collect();
    if expected != got {
        let first = expected
            .iter()
            .zip(&got)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("expected {} {}, found {} {}", a.0, a.1, b.0, b.1))
            .unwrap_or_else(|| format!("expected {} tensors, found {}", expected.len(), got.len()));
        return Err(BenchError::SpecMismatch(first));
    }
    for t in &header.tensors {
        let start = payload + t.offset as usize;
        let data = bytes[start..start + t.bytes() as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        model.set_param(&t.name, Tensor::from_vec(t.shape, data)?)?;
    }
    Ok(model)
}

pub fn save_weights(model: &ModelGraph, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)?).map_err(|e| BenchError::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<ModelGraph> {
    decode(&std::fs::read(path).map_err(|e| BenchError::io(path, e))?)
}
