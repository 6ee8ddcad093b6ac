//! Pretrained weight manifests.
//!
//! A manifest is a JSON document next to a raw little-endian `f32` tensor
//! file:
//!
//! ```json
//! {
//!   "version": 1,
//!   "tensor_file": "weights.bin",
//!   "dtype": "f32",
//!   "architecture": { "channels": [16, 32, 64], "output_dim": 64, ... },
//!   "layers": { "conv0.weight": { "shape": [16, 3, 3, 3], "offset": 0 }, ... }
//! }
//! ```
//!
//! Offsets are in bytes from the start of the tensor file; `tensor_file` is
//! resolved relative to the manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::{NamedTensor, StoredDType};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub version: u32,
    pub tensor_file: String,
    pub dtype: String,
    pub architecture: serde_json::Value,
    pub layers: BTreeMap<String, LayerEntry>,
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.bin`.
pub fn write_weight_manifest(
    dir: &Path,
    stem: &str,
    architecture: serde_json::Value,
    tensors: &[NamedTensor],
) -> Result<WeightManifest> {
    let tensor_file = format!("{stem}.bin");
    let mut payload = Vec::new();
    let mut layers = BTreeMap::new();
    for t in tensors {
        layers.insert(
            t.name.clone(),
            LayerEntry {
                shape: t.shape.clone(),
                offset: payload.len() as u64,
            },
        );
        let as_f32 = NamedTensor {
            dtype: StoredDType::F32,
            ..t.clone()
        };
        as_f32.write_le(&mut payload);
    }
    let manifest = WeightManifest {
        version: 1,
        tensor_file: tensor_file.clone(),
        dtype: "f32".into(),
        architecture,
        layers,
    };
    let bin = dir.join(&tensor_file);
    std::fs::write(&bin, &payload).map_err(|e| Error::io(&bin, e))?;
    let json = dir.join(format!("{stem}.json"));
    std::fs::write(&json, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&json, e))?;
    Ok(manifest)
}

pub fn read_weight_manifest(path: &Path) -> Result<(WeightManifest, Vec<NamedTensor>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: WeightManifest = serde_json::from_str(&text)?;
    if manifest.version != 1 {
        return Err(Error::Checkpoint(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    if manifest.dtype != "f32" {
        return Err(Error::Checkpoint(format!("unsupported dtype {}", manifest.dtype)));
    }
    let bin = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.tensor_file);
    let payload = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut tensors = Vec::with_capacity(manifest.layers.len());
    for (name, entry) in &manifest.layers {
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let slice = payload.get(start..start + 4 * n).ok_or_else(|| {
            Error::Checkpoint(format!("layer {name} lies outside {}", bin.display()))
        })?;
        tensors.push(NamedTensor::read_le(
            name.clone(),
            entry.shape.clone(),
            StoredDType::F32,
            slice,
        )?);
    }
    Ok((manifest, tensors))
}
