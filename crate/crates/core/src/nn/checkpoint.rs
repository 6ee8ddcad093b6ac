//! Versioned checkpoint container.
//!
//! Layout: the magic `PFCK`, a little-endian `u32` version, a `u64` header
//! length, the JSON header, then the raw little-endian tensor payload. The
//! header records the model kind, a configuration snapshot, the epoch, an
//! optional RNG state and a table of `(name, shape, dtype, offset)` entries.

use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoredDType {
    F32,
    F64,
}

impl StoredDType {
    fn width(self) -> usize {
        match self {
            StoredDType::F32 => 4,
            StoredDType::F64 => 8,
        }
    }
}

/// A host copy of one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: StoredDType,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn from_tensor(name: &str, t: &Tensor) -> Result<Self> {
        let dtype = match t.dtype() {
            DType::F64 => StoredDType::F64,
            _ => StoredDType::F32,
        };
        let data = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        Ok(Self {
            name: name.to_string(),
            shape: t.dims().to_vec(),
            dtype,
            data,
        })
    }

    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.data.clone(), self.shape.as_slice(), &Device::Cpu)?
            .to_dtype(dtype)?)
    }

    pub(crate) fn write_le(&self, out: &mut Vec<u8>) {
        for v in &self.data {
            match self.dtype {
                StoredDType::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
                StoredDType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }

    pub(crate) fn read_le(
        name: String,
        shape: Vec<usize>,
        dtype: StoredDType,
        bytes: &[u8],
    ) -> Result<Self> {
        let n: usize = shape.iter().product();
        if bytes.len() != n * dtype.width() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: {} bytes for {n} values",
                bytes.len()
            )));
        }
        let data = match dtype {
            StoredDType::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            StoredDType::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        Ok(Self {
            name,
            shape,
            dtype,
            data,
        })
    }
}

/// Position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string, the word position does not fit in a JSON number.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng position {}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub epoch: usize,
    pub rng: Option<RngState>,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct TableEntry {
    name: String,
    shape: Vec<usize>,
    dtype: StoredDType,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    epoch: usize,
    rng: Option<RngState>,
    tensors: Vec<TableEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut table = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            table.push(TableEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                dtype: t.dtype,
                offset: payload.len() as u64,
            });
            t.write_le(&mut payload);
        }
        let header = serde_json::to_vec(&Header {
            kind: self.kind.clone(),
            config: self.config.clone(),
            epoch: self.epoch,
            rng: self.rng.clone(),
            tensors: table,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let payload = &body[hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + n * e.dtype.width();
            let slice = payload
                .get(start..end)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} out of bounds", e.name)))?;
            tensors.push(NamedTensor::read_le(e.name, e.shape, e.dtype, slice)?);
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            epoch: header.epoch,
            rng: header.rng,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Checks the kind tag before handing out the configuration.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.kind)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sample() -> Checkpoint {
        Checkpoint {
            kind: "test".into(),
            config: serde_json::json!({"b": 1, "a": [1.5, 2.0]}),
            epoch: 3,
            rng: None,
            tensors: vec![
                NamedTensor {
                    name: "w".into(),
                    shape: vec![2, 2],
                    dtype: StoredDType::F32,
                    data: vec![1.0, -0.5, 0.25, 3.0],
                },
                NamedTensor {
                    name: "z".into(),
                    shape: vec![1],
                    dtype: StoredDType::F64,
                    data: vec![std::f64::consts::PI],
                },
            ],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..37 {
            rng.random::<u32>();
        }
        let state = RngState::capture(&rng);
        let mut resumed = state.restore().unwrap();
        let a: Vec<u64> = (0..5).map(|_| rng.random()).collect();
        let b: Vec<u64> = (0..5).map(|_| resumed.random()).collect();
        assert_eq!(a, b);
    }
}
