//! Model file: magic, little-endian `u64` header length, JSON header, then
//! the parameters as one little-endian `f32` blob in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig, Param};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"GRFNETM1";
const FORMAT: &str = "grfnet-model";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    parameters: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        format: FORMAT.into(),
        version: 1,
        config: model.config.clone(),
        parameters: model
            .params
            .iter()
            .map(|p| Entry {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json(path, e))?;
    let mut bytes = Vec::with_capacity(16 + json.len() + 4 * model.parameter_count());
    bytes.extend_from_slice(MODEL_MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for p in &model.params {
        for v in &p.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Shape(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MODEL_MAGIC {
        return Err(bad("not a model file".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16usize.saturating_add(len))
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::json(path, e))?;
    if header.format != FORMAT || header.version != 1 {
        return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
    }
    header.config.validate()?;
    let expected = header.config.manifest();
    if expected.len() != header.parameters.len() {
        return Err(bad(format!(
            "config implies {} parameter arrays, header lists {}",
            expected.len(),
            header.parameters.len()
        )));
    }
    for ((name, shape), e) in expected.iter().zip(&header.parameters) {
        if *name != e.name || *shape != e.shape {
            return Err(bad(format!(
                "parameter `{}` has shape {:?}, config implies `{name}` {:?}",
                e.name, e.shape, shape
            )));
        }
    }
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let blob = &bytes[16 + len..];
    if blob.len() != 4 * total {
        return Err(bad(format!(
            "parameter blob has {} bytes, manifest needs {}",
            blob.len(),
            4 * total
        )));
    }
    let mut floats = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let mut params = Vec::with_capacity(expected.len());
    for (name, shape) in expected {
        let n = shape.iter().product();
        let data: Vec<f32> = floats.by_ref().take(n).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter `{name}`")));
        }
        params.push(Param { name, shape, data });
    }
    Ok(Model {
        config: header.config,
        params,
        training: false,
    })
}
