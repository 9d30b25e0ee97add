//! Raw little-endian `f32` tensors with a `<path>.json` shape sidecar, and
//! JSON config loading.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use fishcore::FrameTensor;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::failure::CmdResult;

#[derive(Debug, Serialize, Deserialize)]
struct ShapeSidecar {
    shape: [usize; 3],
}

/// `<path>.json` next to a data or model file.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn read_bytes(path: &Path) -> CmdResult<Vec<u8>> {
    Ok(fs::read(path).with_context(|| format!("reading {}", path.display()))?)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CmdResult<()> {
    Ok(fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CmdResult<T> {
    let bytes = read_bytes(path)?;
    Ok(serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    write_bytes(path, text.as_bytes())
}

/// Loads a `(B, C, L)` tensor; a byte count that disagrees with the sidecar
/// shape is a shape error.
pub fn read_tensor(path: &Path) -> CmdResult<FrameTensor> {
    let bytes = read_bytes(path)?;
    let meta: ShapeSidecar = read_json(&sidecar(path))?;
    let count: usize = meta.shape.iter().product();
    if bytes.len() != count * 4 {
        return Err(fishcore::Error::Shape(format!(
            "{} holds {} bytes but its sidecar shape {:?} needs {}",
            path.display(),
            bytes.len(),
            meta.shape,
            count * 4
        ))
        .into());
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(FrameTensor::new(meta.shape, data)?)
}

pub fn write_tensor(path: &Path, tensor: &FrameTensor) -> CmdResult<()> {
    let bytes: Vec<u8> = tensor.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    write_bytes(path, &bytes)?;
    write_json(&sidecar(path), &ShapeSidecar { shape: tensor.shape() })
}
