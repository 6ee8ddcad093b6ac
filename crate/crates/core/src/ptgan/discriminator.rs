use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::PROB_EPS;
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, leaky_relu, Checkpoint, Conv2d, Linear, ParamStore, LEAKY_SLOPE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorSpec {
    pub image_size: (usize, usize),
    pub base_channels: usize,
    pub num_classes: usize,
    pub max_layers: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            image_size: (128, 64),
            base_channels: 32,
            num_classes: 751,
            max_layers: 4,
        }
    }
}

impl DiscriminatorSpec {
    /// Channel widths of the stride-2 4x4 convolutions, one per layer while
    /// the feature map is at least 4 pixels on its short side.
    pub fn layer_channels(&self) -> Vec<usize> {
        let (mut h, mut w) = self.image_size;
        let mut out = Vec::new();
        let mut c = self.base_channels;
        while out.len() < self.max_layers && h.min(w) >= 4 {
            out.push(c);
            c *= 2;
            h /= 2;
            w /= 2;
        }
        if out.is_empty() {
            out.push(self.base_channels);
        }
        out
    }
}

/// Convolutional trunk with a real/fake head and an identity head.
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    store: ParamStore,
    convs: Vec<Conv2d>,
    adv: Linear,
    cls: Linear,
}

const CHECKPOINT_KIND: &str = "discriminator";

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec, seed: u64, dtype: DType) -> Result<Self> {
        if spec.num_classes == 0 || spec.base_channels == 0 {
            return Err(Error::Config("discriminator needs classes and channels".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(dtype);
        let mut convs = Vec::new();
        let mut in_ch = 3;
        let (h, w) = spec.image_size;
        for (i, c) in spec.layer_channels().into_iter().enumerate() {
            let (stride, pad) = if h.min(w) >= 4 { (2, 1) } else { (1, 1) };
            convs.push(Conv2d::new(&mut store, &format!("conv{i}"), in_ch, c, 4, stride, pad, &mut rng)?);
            in_ch = c;
        }
        let adv = Linear::new(&mut store, "adv", in_ch, 1, &mut rng)?;
        let cls = Linear::new(&mut store, "cls", in_ch, spec.num_classes, &mut rng)?;
        Ok(Self {
            spec,
            store,
            convs,
            adv,
            cls,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Returns `(p_real [B], class_logits [B, C])`; `p_real` is clamped into
    /// `[1e-7, 1 - 1e-7]`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || (h, w) != self.spec.image_size {
            return Err(Error::InvalidInput(format!(
                "discriminator expects 3x{}x{}, got {c}x{h}x{w}",
                self.spec.image_size.0, self.spec.image_size.1
            )));
        }
        let mut y = x.clone();
        for conv in &self.convs {
            y = leaky_relu(&conv.forward(&y)?, LEAKY_SLOPE)?;
        }
        let feat = global_avg_pool(&y)?;
        let p = candle_nn::ops::sigmoid(&self.adv.forward(&feat)?)?
            .squeeze(1)?
            .clamp(PROB_EPS, 1.0 - PROB_EPS)?;
        Ok((p, self.cls.forward(&feat)?))
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
        let spec: DiscriminatorSpec = serde_json::from_value(ck.config.clone())?;
        let d = Self::new(spec, 0, DType::F32)?;
        d.store.import(&ck.tensors)?;
        Ok(d)
    }
}
