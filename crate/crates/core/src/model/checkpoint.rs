//! Binary checkpoint files.
//!
//! Layout: the magic bytes `ECHOCKPT`, a little-endian `u32` header length, a
//! JSON header, then the payload of little-endian `f32` values. The header
//! lists every tensor with its shape and payload offset (in values) and a
//! SHA-256 digest of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

use super::{Layout, ModelConfig, ParameterSet, RunningStats};

const MAGIC: &[u8; 8] = b"ECHOCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    manifest: Vec<Entry>,
    payload_values: usize,
    sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes parameters and running statistics. Values are narrowed to `f32`.
pub fn checkpoint_bytes<T: Scalar>(params: &ParameterSet<T>, config: &ModelConfig) -> Result<Vec<u8>> {
    let layout = Layout::for_config(config);
    if layout.params.len() != params.tensors().len() {
        return Err(Error::Shape("parameter set does not match the configuration".into()));
    }
    let mut manifest = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>, values: &mut dyn Iterator<Item = f32>| {
        let len: usize = shape.iter().product();
        for v in values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        manifest.push(Entry { name, shape, offset });
        offset += len;
    };
    for (name, t) in params.names().iter().zip(params.tensors()) {
        if !t.is_finite() {
            return Err(Error::Numeric(format!("refusing to save non-finite tensor {name}")));
        }
        push(name.clone(), t.shape().to_vec(), &mut t.data().iter().map(|v| v.f64() as f32));
    }
    for (name, stats) in params.norm_names().iter().zip(params.norms()) {
        push(format!("{name}.running_mean"), vec![stats.mean.len()], &mut stats.mean.iter().copied());
        push(format!("{name}.running_var"), vec![stats.var.len()], &mut stats.var.iter().copied());
    }
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: config.clone(),
        manifest,
        payload_values: offset,
        sha256: hex(&Sha256::digest(&payload)),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Contract(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(params: &ParameterSet<T>, config: &ModelConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(params, config)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(ParameterSet<T>, ModelConfig)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, path)
}

/// Parses a checkpoint, verifying integrity before building anything.
pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8], path: &Path) -> Result<(ParameterSet<T>, ModelConfig)> {
    let integrity = |reason: String| Error::Integrity {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < header_len {
        return Err(integrity(format!("header of {header_len} bytes is truncated")));
    }
    let header: Header = serde_json::from_slice(&body[..header_len])
        .map_err(|e| Error::format(path, format!("bad checkpoint header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("checkpoint version {} is not supported", header.format_version),
        ));
    }
    let payload = &body[header_len..];
    if payload.len() != header.payload_values * 4 {
        return Err(integrity(format!(
            "payload holds {} bytes, header promises {}",
            payload.len(),
            header.payload_values * 4
        )));
    }
    if hex(&Sha256::digest(payload)) != header.sha256 {
        return Err(integrity("payload checksum mismatch".into()));
    }
    header.config.validate()?;

    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
        .collect();
    let lookup = |name: &str, shape: &[usize]| -> Result<&[f32]> {
        let entry = header
            .manifest
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Shape(format!("checkpoint lacks tensor {name}")))?;
        if entry.shape != shape {
            return Err(Error::Shape(format!(
                "{name}: checkpoint shape {:?}, model expects {shape:?}",
                entry.shape
            )));
        }
        let len: usize = shape.iter().product();
        values
            .get(entry.offset..entry.offset + len)
            .ok_or_else(|| integrity(format!("{name} lies outside the payload")))
    };

    let layout = Layout::for_config(&header.config);
    let mut tensors = Vec::with_capacity(layout.params.len());
    for (name, shape, _) in &layout.params {
        let data = lookup(name, shape)?;
        tensors.push(Tensor::new(shape, data.iter().map(|v| T::of(f64::from(*v))).collect())?);
    }
    let mut norms = Vec::with_capacity(layout.norms.len());
    for (name, d) in &layout.norms {
        norms.push(RunningStats {
            mean: lookup(&format!("{name}.running_mean"), &[*d])?.to_vec(),
            var: lookup(&format!("{name}.running_var"), &[*d])?.to_vec(),
        });
    }
    if header.manifest.len() != tensors.len() + 2 * norms.len() {
        return Err(Error::Shape("checkpoint holds tensors the model does not use".into()));
    }
    let params = ParameterSet::assemble(&layout, tensors, norms)?;
    Ok((params, header.config))
}

/// Loads a checkpoint and checks it against an expected configuration.
pub fn load_checkpoint_for<T: Scalar>(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<ParameterSet<T>> {
    let (params, config) = load_checkpoint(path)?;
    if config.embed_dim != expected.embed_dim || config.encoder_layers != expected.encoder_layers {
        return Err(Error::Shape(format!(
            "checkpoint has d = {}, L = {}; expected d = {}, L = {}",
            config.embed_dim, config.encoder_layers, expected.embed_dim, expected.encoder_layers
        )));
    }
    if &config != expected {
        return Err(Error::Shape("checkpoint configuration differs from the requested model".into()));
    }
    Ok(params)
}
