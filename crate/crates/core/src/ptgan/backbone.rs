//! Convolutional descriptor backbones.
//!
//! The trunk is a stack of 3x3 stride-2 convolutions with LeakyReLU, a final
//! 3x3 convolution to `output_dim` channels and global average pooling. The
//! toy variant is initialized from a seed; the generic and re-ID variants
//! load weights through a [`WeightManifest`](crate::nn::WeightManifest).

use std::path::Path;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentConfig};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{
    self, global_avg_pool, images_to_tensor, leaky_relu, read_weight_manifest,
    write_weight_manifest, Checkpoint, Conv2d, Linear, ParamStore, LEAKY_SLOPE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneVariant {
    Generic,
    ReidFinetuned,
    Toy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrunkSpec {
    /// Output channels of the stride-2 stages.
    pub channels: Vec<usize>,
    pub output_dim: usize,
    /// Expected input `(height, width)`.
    pub input_size: (usize, usize),
}

impl Default for TrunkSpec {
    fn default() -> Self {
        Self {
            channels: vec![32, 64, 128, 256],
            output_dim: 2048,
            input_size: (128, 64),
        }
    }
}

impl TrunkSpec {
    pub fn toy(output_dim: usize, input_size: (usize, usize)) -> Self {
        Self {
            channels: vec![16, 32, 64],
            output_dim,
            input_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 || self.channels.contains(&0) {
            return Err(Error::Config("trunk widths must be positive".into()));
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 {
            return Err(Error::Config("trunk input size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub variant: BackboneVariant,
    pub spec: TrunkSpec,
    /// Free-form origin tag, e.g. the manifest path or the seed.
    pub provenance: String,
    store: ParamStore,
    stages: Vec<Conv2d>,
    head: Conv2d,
}

const CHECKPOINT_KIND: &str = "feature_extractor";

#[derive(Serialize, Deserialize)]
struct ExtractorMeta {
    variant: BackboneVariant,
    spec: TrunkSpec,
    provenance: String,
}

impl FeatureExtractor {
    fn build(
        variant: BackboneVariant,
        spec: TrunkSpec,
        provenance: String,
        dtype: DType,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new(dtype);
        let mut stages = Vec::with_capacity(spec.channels.len());
        let mut in_ch = 3;
        for (i, &c) in spec.channels.iter().enumerate() {
            stages.push(Conv2d::new(&mut store, &format!("conv{i}"), in_ch, c, 3, 2, 1, rng)?);
            in_ch = c;
        }
        let head = Conv2d::new(&mut store, "head", in_ch, spec.output_dim, 3, 1, 1, rng)?;
        Ok(Self {
            variant,
            spec,
            provenance,
            store,
            stages,
            head,
        })
    }

    /// A seeded toy trunk.
    pub fn toy(spec: TrunkSpec, seed: u64, dtype: DType) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(BackboneVariant::Toy, spec, format!("toy seed {seed}"), dtype, &mut rng)
    }

    /// Loads a pretrained trunk from a weight manifest. The manifest's
    /// `architecture` field must deserialize to a [`TrunkSpec`].
    pub fn from_manifest(path: &Path, variant: BackboneVariant) -> Result<Self> {
        let (manifest, tensors) = read_weight_manifest(path)?;
        let spec: TrunkSpec = serde_json::from_value(manifest.architecture)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fe = Self::build(variant, spec, path.display().to_string(), DType::F32, &mut rng)?;
        fe.store.import(&tensors)?;
        Ok(fe)
    }

    pub fn write_manifest(&self, dir: &Path, stem: &str) -> Result<()> {
        write_weight_manifest(
            dir,
            stem,
            serde_json::to_value(&self.spec)?,
            &self.store.export()?,
        )?;
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// `[B, 3, H, W] -> [B, D]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || (h, w) != self.spec.input_size {
            return Err(Error::InvalidInput(format!(
                "extractor expects 3x{}x{} input, got {c}x{h}x{w}",
                self.spec.input_size.0, self.spec.input_size.1
            )));
        }
        let mut y = x.clone();
        for stage in &self.stages {
            y = leaky_relu(&stage.forward(&y)?, LEAKY_SLOPE)?;
        }
        global_avg_pool(&self.head.forward(&y)?)
    }

    /// Descriptors for a batch of images of the expected size.
    pub fn extract(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let x = images_to_tensor(chunk, self.dtype())?;
            out.extend(nn::tensor_rows(&self.forward(&x)?.detach())?);
        }
        Ok(out)
    }

    pub fn extract_one(&self, image: &Image) -> Result<Vec<f32>> {
        Ok(self.extract(&[image])?.remove(0))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            config: serde_json::to_value(ExtractorMeta {
                variant: self.variant,
                spec: self.spec.clone(),
                provenance: self.provenance.clone(),
            })?,
            epoch: 0,
            rng: None,
            tensors: self.store.export()?,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let meta: ExtractorMeta = serde_json::from_value(ck.config.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fe = Self::build(meta.variant, meta.spec, meta.provenance, DType::F32, &mut rng)?;
        fe.store.import(&ck.tensors)?;
        Ok(fe)
    }

    fn deep_copy(&self, variant: BackboneVariant, provenance: String) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let copy = Self::build(variant, self.spec.clone(), provenance, self.dtype(), &mut rng)?;
        copy.store.import(&self.store.export()?)?;
        Ok(copy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Fraction of every identity's images held out for early stopping.
    pub val_frac: f64,
    pub augment: bool,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 40,
            patience: 8,
            val_frac: 0.1,
            augment: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FinetuneHistory {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub best_epoch: usize,
}

/// Maps identities to contiguous class indices in ascending identity order.
pub fn class_index(samples: &[Sample]) -> std::collections::BTreeMap<u32, usize> {
    let ids: std::collections::BTreeSet<u32> = samples.iter().map(Sample::identity).collect();
    ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
}

/// Splits sample indices into (train, validation), holding out
/// `ceil(val_frac * n)` images (at least one) of every identity that has at
/// least two images.
pub fn holdout_by_image(samples: &[Sample], val_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let ids: Vec<u32> = samples.iter().map(Sample::identity).collect();
    holdout_indices(&ids, val_frac, seed)
}

/// [`holdout_by_image`] over a plain identity list.
pub fn holdout_indices(identities: &[u32], val_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, id) in identities.iter().enumerate() {
        groups.entry(*id).or_default().push(i);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (_, mut idx) in groups {
        idx.shuffle(&mut rng);
        let n_val = if idx.len() >= 2 && val_frac > 0.0 {
            ((val_frac * idx.len() as f64).ceil() as usize).clamp(1, idx.len() - 1)
        } else {
            0
        };
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Finetunes a copy of `base` with an identity-classification head and
/// returns the copy that scored best on the held-out images.
pub fn finetune_reid(
    base: &FeatureExtractor,
    train: &[Sample],
    cfg: &FinetuneConfig,
    aug: &AugmentConfig,
) -> Result<(FeatureExtractor, FinetuneHistory)> {
    use candle_nn::{AdamW, Optimizer, ParamsAdamW};

    if train.is_empty() {
        return Err(Error::InsufficientData("no training samples to finetune on".into()));
    }
    let classes = class_index(train);
    let fe = base.deep_copy(BackboneVariant::ReidFinetuned, format!("finetuned from {}", base.provenance))?;
    let mut head_store = ParamStore::new(fe.dtype());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let head = Linear::new(&mut head_store, "cls", fe.output_dim(), classes.len(), &mut rng)?;
    let mut vars = fe.store.trainable();
    vars.extend(head_store.trainable());
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr: cfg.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;

    let (train_idx, val_idx) = holdout_by_image(train, cfg.val_frac, cfg.seed);
    let labels: Vec<u32> = train.iter().map(|s| classes[&s.identity()] as u32).collect();
    let mut history = FinetuneHistory::default();
    let mut best = (f64::NEG_INFINITY, fe.store.export()?);
    let mut stale = 0;
    let mut order = train_idx.clone();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let imgs: Vec<Image> = batch
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augment(&train[i].image, aug, &mut rng)
                    } else {
                        Ok(train[i].image.clone())
                    }
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&Image> = imgs.iter().collect();
            let x = images_to_tensor(&refs, fe.dtype())?;
            let y: Vec<u32> = batch.iter().map(|&i| labels[i]).collect();
            let y = Tensor::new(y.as_slice(), x.device())?;
            let logits = head.forward(&fe.forward(&x)?)?;
            let loss = super::losses::classification_loss(&logits, &y, super::Reduction::Mean)?;
            let value = nn::scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Divergence(format!("finetune loss became {value} in epoch {epoch}")));
            }
            opt.backward_step(&loss)?;
            total += value * batch.len() as f64;
        }
        history.train_loss.push(total / order.len().max(1) as f64);

        let eval_idx = if val_idx.is_empty() { &train_idx } else { &val_idx };
        let acc = accuracy(&fe, &head, train, eval_idx, &labels)?;
        history.val_accuracy.push(acc);
        if acc > best.0 {
            best = (acc, fe.store.export()?);
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    fe.store.import(&best.1)?;
    Ok((fe, history))
}

fn accuracy(
    fe: &FeatureExtractor,
    head: &Linear,
    samples: &[Sample],
    idx: &[usize],
    labels: &[u32],
) -> Result<f64> {
    let mut correct = 0;
    for chunk in idx.chunks(64) {
        let refs: Vec<&Image> = chunk.iter().map(|&i| &samples[i].image).collect();
        let x = images_to_tensor(&refs, fe.dtype())?;
        let pred = head.forward(&fe.forward(&x)?)?.argmax(1)?.to_vec1::<u32>()?;
        correct += pred.iter().zip(chunk).filter(|(p, &i)| **p == labels[i]).count();
    }
    Ok(correct as f64 / idx.len().max(1) as f64)
}
