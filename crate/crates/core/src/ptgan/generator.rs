use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::encode_pose;
use crate::dataset::{PoseVector, POSE_FEATURE_DIM};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{self, leaky_relu, Checkpoint, Conv2d, Linear, ParamStore, LEAKY_SLOPE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub desc_dim: usize,
    pub image_size: (usize, usize),
    /// Channels of the base feature map; halved (down to 16) per upsampling
    /// stage.
    pub base_channels: usize,
    pub residual_blocks: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            desc_dim: 2048,
            image_size: (128, 64),
            base_channels: 64,
            residual_blocks: 6,
        }
    }
}

impl GeneratorSpec {
    /// Number of x2 upsampling stages: the largest `u` with `H / 2^u >= 8`
    /// and both sides divisible by `2^u`.
    pub fn upsample_stages(&self) -> usize {
        let (h, w) = self.image_size;
        let mut u = 0;
        while h % (1 << (u + 1)) == 0 && w % (1 << (u + 1)) == 0 && h >> (u + 1) >= 8 {
            u += 1;
        }
        u
    }

    pub fn base_size(&self) -> (usize, usize) {
        let u = self.upsample_stages();
        (self.image_size.0 >> u, self.image_size.1 >> u)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if self.desc_dim == 0 || self.base_channels == 0 || h == 0 || w == 0 {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone)]
struct ResBlock {
    a: Conv2d,
    b: Conv2d,
}

/// Pose-conditioned image generator `G(descriptor, pose)`.
///
/// The descriptor and the 50-dimensional pose encoding are concatenated and
/// projected onto a small feature map, refined by residual blocks, upsampled
/// to the image size and squashed into `[0, 1]` by a sigmoid.
#[derive(Clone)]
pub struct Generator {
    pub spec: GeneratorSpec,
    store: ParamStore,
    input: Linear,
    blocks: Vec<ResBlock>,
    ups: Vec<Conv2d>,
    out: Conv2d,
}

const CHECKPOINT_KIND: &str = "generator";

impl Generator {
    pub fn new(spec: GeneratorSpec, seed: u64, dtype: DType) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(dtype);
        let (bh, bw) = spec.base_size();
        let c0 = spec.base_channels;
        let input = Linear::new(&mut store, "input", spec.desc_dim + POSE_FEATURE_DIM, c0 * bh * bw, &mut rng)?;
        let mut blocks = Vec::with_capacity(spec.residual_blocks);
        for i in 0..spec.residual_blocks {
            blocks.push(ResBlock {
                a: Conv2d::new(&mut store, &format!("res{i}.a"), c0, c0, 3, 1, 1, &mut rng)?,
                b: Conv2d::new(&mut store, &format!("res{i}.b"), c0, c0, 3, 1, 1, &mut rng)?,
            });
        }
        let mut ups = Vec::new();
        let mut c = c0;
        for s in 0..spec.upsample_stages() {
            let next = (c / 2).max(16);
            ups.push(Conv2d::new(&mut store, &format!("up{s}"), c, next, 3, 1, 1, &mut rng)?);
            c = next;
        }
        let out = Conv2d::new(&mut store, "out", c, 3, 3, 1, 1, &mut rng)?;
        Ok(Self {
            spec,
            store,
            input,
            blocks,
            ups,
            out,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// `desc [B, D]`, `pose [B, 50]` -> images `[B, 3, H, W]` in `[0, 1]`.
    pub fn forward(&self, desc: &Tensor, pose: &Tensor) -> Result<Tensor> {
        let (b, d) = desc.dims2()?;
        if d != self.spec.desc_dim {
            return Err(Error::shape(self.spec.desc_dim, d));
        }
        if pose.dims() != [b, POSE_FEATURE_DIM] {
            return Err(Error::shape(b * POSE_FEATURE_DIM, pose.elem_count()));
        }
        let (bh, bw) = self.spec.base_size();
        let z = Tensor::cat(&[desc, pose], 1)?;
        let mut x = leaky_relu(&self.input.forward(&z)?, LEAKY_SLOPE)?.reshape((
            b,
            self.spec.base_channels,
            bh,
            bw,
        ))?;
        for blk in &self.blocks {
            let h = leaky_relu(&blk.a.forward(&x)?, LEAKY_SLOPE)?;
            x = (&x + blk.b.forward(&h)?)?;
        }
        for up in &self.ups {
            let (_, _, h, w) = x.dims4()?;
            x = leaky_relu(&up.forward(&x.upsample_nearest2d(2 * h, 2 * w)?)?, LEAKY_SLOPE)?;
        }
        Ok(candle_nn::ops::sigmoid(&self.out.forward(&x)?)?)
    }

    /// Renders every `(descriptor, pose)` combination, descriptor-major.
    pub fn generate(&self, desc: &[f32], poses: &[PoseVector]) -> Result<Vec<Image>> {
        if desc.len() != self.spec.desc_dim {
            return Err(Error::shape(self.spec.desc_dim, desc.len()));
        }
        self.generate_batch(&[desc.to_vec()], poses)
    }

    /// For each descriptor, one image per pose (`descs.len() * poses.len()`
    /// images, descriptor-major).
    pub fn generate_batch(&self, descs: &[Vec<f32>], poses: &[PoseVector]) -> Result<Vec<Image>> {
        if poses.is_empty() || descs.is_empty() {
            return Ok(Vec::new());
        }
        let encoded: Vec<Vec<f32>> = poses.iter().map(encode_pose).collect();
        let mut out = Vec::with_capacity(descs.len() * poses.len());
        let per_chunk = (64 / poses.len()).max(1);
        for chunk in descs.chunks(per_chunk) {
            let mut d_rows = Vec::with_capacity(chunk.len() * poses.len());
            let mut p_rows = Vec::with_capacity(chunk.len() * poses.len());
            for d in chunk {
                for p in &encoded {
                    d_rows.push(d.clone());
                    p_rows.push(p.clone());
                }
            }
            let d = nn::rows_to_tensor(&d_rows, self.dtype())?;
            let p = nn::rows_to_tensor(&p_rows, self.dtype())?;
            out.extend(nn::tensor_to_images(&self.forward(&d, &p)?.detach())?);
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, epoch: usize) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            config: serde_json::to_value(&self.spec)?,
            epoch,
            rng: None,
            tensors: self.store.export()?,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let spec: GeneratorSpec = serde_json::from_value(ck.config.clone())?;
        let g = Self::new(spec, 0, DType::F32)?;
        g.store.import(&ck.tensors)?;
        Ok(g)
    }
}
