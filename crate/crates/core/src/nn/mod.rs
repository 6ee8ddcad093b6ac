//! Small neural-network toolkit on top of candle: a named parameter store
//! with Kaiming initialization, the handful of layers the models need,
//! checkpoint serialization and pretrained-weight manifests.

mod checkpoint;
mod manifest;
pub mod gradcheck;

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

pub use self::checkpoint::{Checkpoint, NamedTensor, RngState, StoredDType, CHECKPOINT_VERSION};
pub use self::manifest::{read_weight_manifest, write_weight_manifest, LayerEntry, WeightManifest};
use crate::error::{Error, Result};
use crate::image::Image;

/// Default negative slope of every LeakyReLU in the models.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Named trainable parameters plus non-trainable buffers (batch-norm running
/// statistics). Iteration order is the lexicographic name order.
#[derive(Clone, Debug)]
pub struct ParamStore {
    dtype: DType,
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            dtype,
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn insert(map: &mut BTreeMap<String, Var>, name: &str, var: Var) -> Result<Var> {
        if map.contains_key(name) {
            return Err(Error::InvalidInput(format!("duplicate parameter {name}")));
        }
        map.insert(name.to_string(), var.clone());
        Ok(var)
    }

    fn var_from(&self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        Ok(Var::from_tensor(&t)?)
    }

    /// Kaiming-normal weights: `N(0, 2 / fan_in)`.
    pub fn kaiming(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let values = (0..n).map(|_| normal.sample(rng)).collect();
        let var = self.var_from(shape, values)?;
        Self::insert(&mut self.params, name, var)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let n = shape.iter().product();
        let var = self.var_from(shape, vec![value; n])?;
        Self::insert(&mut self.params, name, var)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let n = shape.iter().product();
        let var = self.var_from(shape, vec![value; n])?;
        Self::insert(&mut self.buffers, name, var)
    }

    pub fn trainable(&self) -> Vec<Var> {
        self.params.values().cloned().collect()
    }

    pub fn param(&self, name: &str) -> Option<&Var> {
        self.params.get(name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    fn all(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.params.iter().chain(self.buffers.iter())
    }

    /// Parameters and buffers as named host tensors.
    pub fn export(&self) -> Result<Vec<NamedTensor>> {
        self.all()
            .map(|(name, var)| NamedTensor::from_tensor(name, var.as_tensor()))
            .collect()
    }

    /// Overwrites every parameter and buffer from `tensors`. Names and shapes
    /// must match exactly.
    pub fn import(&self, tensors: &[NamedTensor]) -> Result<()> {
        let by_name: BTreeMap<&str, &NamedTensor> =
            tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        for (name, var) in self.all() {
            let t = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: expected shape {:?}, found {:?}",
                    var.dims(),
                    t.shape
                )));
            }
            var.set(&t.to_tensor(self.dtype)?)?;
        }
        if by_name.len() != self.params.len() + self.buffers.len() {
            return Err(Error::Checkpoint("checkpoint holds unexpected tensors".into()));
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        for t in self.export()? {
            h.update(t.name.as_bytes());
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        Ok(hex(&h.finalize()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fully connected layer, `y = x W^T + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.kaiming(&format!("{name}.weight"), &[out_dim, in_dim], in_dim, rng)?,
            bias: store.constant(&format!("{name}.bias"), &[out_dim], 0.0)?,
        })
    }

    pub fn param_count(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.as_tensor().t()?)?
            .broadcast_add(self.bias.as_tensor())?)
    }
}

/// Square-kernel 2-D convolution over `[B, C, H, W]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        Ok(Self {
            weight: store.kaiming(
                &format!("{name}.weight"),
                &[out_ch, in_ch, kernel, kernel],
                fan_in,
                rng,
            )?,
            bias: store.constant(&format!("{name}.bias"), &[out_ch], 0.0)?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        let out_ch = self.bias.dims()[0];
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, out_ch, 1, 1))?)?)
    }
}

/// Batch normalization over the feature axis of `[B, F]` inputs.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub gamma: Var,
    pub beta: Var,
    pub running_mean: Var,
    pub running_var: Var,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(&format!("{name}.gamma"), &[dim], 1.0)?,
            beta: store.constant(&format!("{name}.beta"), &[dim], 0.0)?,
            running_mean: store.buffer(&format!("{name}.running_mean"), &[dim], 0.0)?,
            running_var: store.buffer(&format!("{name}.running_var"), &[dim], 1.0)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn param_count(dim: usize) -> usize {
        2 * dim
    }

    /// Training mode normalizes with batch statistics and, when
    /// `update_stats` is set, folds them into the running estimates.
    pub fn forward_train(&self, x: &Tensor, update_stats: bool) -> Result<Tensor> {
        let n = x.dim(0)?;
        let mean = x.mean_keepdim(0)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(0)?;
        if update_stats {
            let m = self.momentum;
            let unbiased = if n > 1 {
                var.affine(n as f64 / (n - 1) as f64, 0.0)?
            } else {
                var.clone()
            };
            let rm = (self.running_mean.as_tensor().affine(1.0 - m, 0.0)?
                + mean.squeeze(0)?.detach().affine(m, 0.0)?)?;
            let rv = (self.running_var.as_tensor().affine(1.0 - m, 0.0)?
                + unbiased.squeeze(0)?.detach().affine(m, 0.0)?)?;
            self.running_mean.set(&rm)?;
            self.running_var.set(&rv)?;
        }
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        self.affine(&normed)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let normed = x
            .broadcast_sub(self.running_mean.as_tensor())?
            .broadcast_div(&(self.running_var.as_tensor() + self.eps)?.sqrt()?)?;
        self.affine(&normed)
    }

    fn affine(&self, normed: &Tensor) -> Result<Tensor> {
        Ok(normed
            .broadcast_mul(self.gamma.as_tensor())?
            .broadcast_add(self.beta.as_tensor())?)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok((x.maximum(0.0)? + x.minimum(0.0)?.affine(slope, 0.0)?)?)
}

/// Inverted dropout with a mask drawn from `rng`.
pub fn dropout(x: &Tensor, p: f64, rng: &mut impl Rng) -> Result<Tensor> {
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let mask: Vec<f64> = (0..x.elem_count())
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok(x.mul(&mask)?)
}

/// Global average pooling `[B, C, H, W] -> [B, C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}

/// Stacks images into a `[B, 3, H, W]` tensor.
pub fn images_to_tensor(images: &[&Image], dtype: DType) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::InvalidInput("empty image batch".into()));
    };
    let (h, w) = first.shape();
    let mut data = Vec::with_capacity(images.len() * h * w * 3);
    for img in images {
        if img.shape() != (h, w) {
            return Err(Error::shape(h * w, img.height() * img.width()));
        }
        data.extend_from_slice(img.data());
    }
    let t = Tensor::from_vec(data, (images.len(), h, w, 3), &Device::Cpu)?
        .permute((0, 3, 1, 2))?
        .contiguous()?;
    Ok(t.to_dtype(dtype)?)
}

/// Inverse of [`images_to_tensor`].
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<Image>> {
    let (b, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::shape(3, c));
    }
    let hwc = t.permute((0, 2, 3, 1))?.contiguous()?.to_dtype(DType::F32)?;
    let data = hwc.flatten_all()?.to_vec1::<f32>()?;
    data.chunks(h * w * 3)
        .take(b)
        .map(|chunk| Image::new(h, w, chunk.to_vec()))
        .collect()
}

/// Rows of a `[B, D]` tensor as `f32` vectors.
pub fn tensor_rows(t: &Tensor) -> Result<Vec<Vec<f32>>> {
    Ok(t.to_dtype(DType::F32)?.to_vec2::<f32>()?)
}

pub fn rows_to_tensor(rows: &[Vec<f32>], dtype: DType) -> Result<Tensor> {
    let Some(first) = rows.first() else {
        return Err(Error::InvalidInput("empty descriptor batch".into()));
    };
    let d = first.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidInput("ragged descriptor batch".into()));
    }
    let flat: Vec<f32> = rows.iter().flatten().copied().collect();
    Ok(Tensor::from_vec(flat, (rows.len(), d), &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
