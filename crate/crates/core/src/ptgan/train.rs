use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{class_index, FeatureExtractor};
use super::discriminator::{Discriminator, DiscriminatorSpec};
use super::generator::{Generator, GeneratorSpec};
use super::losses::{
    classification_loss, discriminator_adv_loss, generator_adv_loss, l2_loss, total_gan_loss,
    LossParts, LossWeights, Reduction,
};
use super::pairs::PairSampler;
use crate::augment::{augment, AugmentConfig};
use crate::cluster::encode_pose;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{self, images_to_tensor, Checkpoint, NamedTensor, RngState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanTrainConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Real-image targets are drawn uniformly from this range.
    pub label_smooth_noise: (f64, f64),
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    pub loss_weights: LossWeights,
    /// Use `-log D(G(.))` instead of `log(1 - D(G(.)))` for the generator.
    pub non_saturating: bool,
    /// Batches per epoch; defaults to one pass over the posed images.
    pub steps_per_epoch: Option<usize>,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_size: 32,
            epochs: 30,
            label_smooth_noise: (0.9, 1.0),
            seed: 0,
            checkpoint_every: 0,
            loss_weights: LossWeights::default(),
            non_saturating: false,
            steps_per_epoch: None,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let in_open = |b: f64| b > 0.0 && b < 1.0;
        if !in_open(self.adam_beta1) || !in_open(self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in (0, 1)".into()));
        }
        let (lo, hi) = self.label_smooth_noise;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::Config("label_smooth_noise must be a sub-range of [0, 1]".into()));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch_size and lr must be positive".into()));
        }
        Ok(())
    }
}

/// Mean loss components over one epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub gen: f64,
    pub disc: f64,
    pub gen_adv: f64,
    pub disc_adv: f64,
    pub l2: f64,
    pub cls_real: f64,
    pub cls_fake: f64,
    pub d_real: f64,
    pub d_fake: f64,
}

pub struct GanOutcome {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub history: Vec<EpochLosses>,
    /// Class index of every training identity, ascending.
    pub identities: Vec<u32>,
}

const GAN_KIND: &str = "ptgan";

#[derive(Serialize, Deserialize)]
struct GanMeta {
    generator: GeneratorSpec,
    discriminator: DiscriminatorSpec,
    train: GanTrainConfig,
    identities: Vec<u32>,
    history: Vec<EpochLosses>,
}

fn prefixed(prefix: &str, tensors: Vec<NamedTensor>) -> Vec<NamedTensor> {
    tensors
        .into_iter()
        .map(|t| NamedTensor {
            name: format!("{prefix}/{}", t.name),
            ..t
        })
        .collect()
}

fn unprefixed(prefix: &str, tensors: &[NamedTensor]) -> Vec<NamedTensor> {
    let p = format!("{prefix}/");
    tensors
        .iter()
        .filter_map(|t| {
            t.name.strip_prefix(&p).map(|n| NamedTensor {
                name: n.to_string(),
                ..t.clone()
            })
        })
        .collect()
}

impl GanOutcome {
    pub fn to_checkpoint(&self, cfg: &GanTrainConfig, rng: Option<&ChaCha8Rng>) -> Result<Checkpoint> {
        gan_checkpoint(
            &self.generator,
            &self.discriminator,
            cfg,
            &self.identities,
            &self.history,
            rng,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, GanTrainConfig)> {
        ck.expect_kind(GAN_KIND)?;
        let meta: GanMeta = serde_json::from_value(ck.config.clone())?;
        let generator = Generator::new(meta.generator, 0, DType::F32)?;
        generator.store().import(&unprefixed("generator", &ck.tensors))?;
        let discriminator = Discriminator::new(meta.discriminator, 0, DType::F32)?;
        discriminator.store().import(&unprefixed("discriminator", &ck.tensors))?;
        Ok((
            Self {
                generator,
                discriminator,
                history: meta.history,
                identities: meta.identities,
            },
            meta.train,
        ))
    }
}

fn gan_checkpoint(
    g: &Generator,
    d: &Discriminator,
    cfg: &GanTrainConfig,
    identities: &[u32],
    history: &[EpochLosses],
    rng: Option<&ChaCha8Rng>,
) -> Result<Checkpoint> {
    let mut tensors = prefixed("discriminator", d.store().export()?);
    tensors.extend(prefixed("generator", g.store().export()?));
    Ok(Checkpoint {
        kind: GAN_KIND.into(),
        config: serde_json::to_value(GanMeta {
            generator: g.spec.clone(),
            discriminator: d.spec.clone(),
            train: cfg.clone(),
            identities: identities.to_vec(),
            history: history.to_vec(),
        })?,
        epoch: history.len(),
        rng: rng.map(RngState::capture),
        tensors,
    })
}

fn fit_size(img: &Image, size: (usize, usize)) -> Image {
    img.resize(size.0, size.1)
}

/// Adversarial training of the generator and discriminator. `f_r1` encodes
/// the source image and stays frozen. When `checkpoint_path` is set the
/// combined checkpoint is written there every `checkpoint_every` epochs and
/// after the last one.
pub fn train_ptgan(
    train: &[Sample],
    f_r1: &FeatureExtractor,
    gen_spec: GeneratorSpec,
    disc_spec: DiscriminatorSpec,
    cfg: &GanTrainConfig,
    aug: &AugmentConfig,
    checkpoint_path: Option<&Path>,
) -> Result<GanOutcome> {
    cfg.validate()?;
    if gen_spec.desc_dim != f_r1.output_dim() {
        return Err(Error::Config(format!(
            "generator expects {}-d descriptors, backbone yields {}",
            gen_spec.desc_dim,
            f_r1.output_dim()
        )));
    }
    let classes = class_index(train);
    let identities: Vec<u32> = classes.keys().copied().collect();
    let sampler = PairSampler::new(train, &classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let image_size = gen_spec.image_size;
    let generator = Generator::new(gen_spec, rng.random(), DType::F32)?;
    let disc_spec = DiscriminatorSpec {
        image_size,
        num_classes: classes.len(),
        ..disc_spec
    };
    let discriminator = Discriminator::new(disc_spec, rng.random(), DType::F32)?;
    let adam = ParamsAdamW {
        lr: cfg.lr,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let mut g_opt = AdamW::new(generator.store().trainable(), adam.clone())?;
    let mut d_opt = AdamW::new(discriminator.store().trainable(), adam)?;
    let steps = cfg
        .steps_per_epoch
        .unwrap_or_else(|| sampler.num_images().div_ceil(cfg.batch_size))
        .max(1);
    let w = &cfg.loss_weights;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut acc = EpochLosses {
            epoch,
            ..EpochLosses::default()
        };
        for _ in 0..steps {
            let pairs: Vec<_> = (0..cfg.batch_size).map(|_| sampler.sample(&mut rng)).collect();
            let mut src = Vec::with_capacity(pairs.len());
            let mut tgt = Vec::with_capacity(pairs.len());
            let mut poses = Vec::with_capacity(pairs.len());
            for p in &pairs {
                let s = fit_size(&train[p.source].image, f_r1.spec.input_size);
                src.push(augment(&s, aug, &mut rng)?);
                tgt.push(fit_size(&train[p.target].image, image_size));
                poses.push(encode_pose(sampler.target_pose(train, p)));
            }
            let src_t = images_to_tensor(&src.iter().collect::<Vec<_>>(), DType::F32)?;
            let tgt_t = images_to_tensor(&tgt.iter().collect::<Vec<_>>(), DType::F32)?;
            let pose_t = nn::rows_to_tensor(&poses, DType::F32)?;
            let labels: Vec<u32> = pairs.iter().map(|p| p.label as u32).collect();
            let y = Tensor::new(labels.as_slice(), &Device::Cpu)?;
            let (lo, hi) = cfg.label_smooth_noise;
            let targets: Vec<f32> = (0..pairs.len())
                .map(|_| if hi > lo { rng.random_range(lo..hi) as f32 } else { lo as f32 })
                .collect();
            let targets = Tensor::new(targets.as_slice(), &Device::Cpu)?;

            let desc = f_r1.forward(&src_t)?.detach();
            let fake = generator.forward(&desc, &pose_t)?;

            let (d_real, logits_real) = discriminator.forward(&tgt_t)?;
            let (d_fake, _) = discriminator.forward(&fake.detach())?;
            let disc_adv = discriminator_adv_loss(&d_real, &d_fake, &targets)?;
            let cls_real = classification_loss(&logits_real, &y, Reduction::Mean)?;
            let disc_loss = (disc_adv.affine(w.adv, 0.0)? + cls_real.affine(w.cls, 0.0)?)?;
            let disc_value = nn::scalar(&disc_loss)?;
            if !disc_value.is_finite() {
                return Err(Error::Divergence(format!(
                    "discriminator loss became {disc_value} in epoch {epoch}"
                )));
            }
            d_opt.backward_step(&disc_loss)?;

            let (d_fake_g, logits_fake) = discriminator.forward(&fake)?;
            let parts = LossParts {
                gen_adv: generator_adv_loss(&d_fake_g, cfg.non_saturating)?,
                disc_adv: disc_adv.detach(),
                l2: l2_loss(&tgt_t, &fake)?,
                cls_real: cls_real.detach(),
                cls_fake: classification_loss(&logits_fake, &y, Reduction::Mean)?,
            };
            let (gen_loss, _) = total_gan_loss(&parts, w)?;
            let gen_value = nn::scalar(&gen_loss)?;
            if !gen_value.is_finite() {
                return Err(Error::Divergence(format!(
                    "generator loss became {gen_value} in epoch {epoch}"
                )));
            }
            g_opt.backward_step(&gen_loss)?;

            acc.gen += gen_value;
            acc.disc += disc_value;
            acc.gen_adv += nn::scalar(&parts.gen_adv)?;
            acc.disc_adv += nn::scalar(&parts.disc_adv)?;
            acc.l2 += nn::scalar(&parts.l2)?;
            acc.cls_real += nn::scalar(&parts.cls_real)?;
            acc.cls_fake += nn::scalar(&parts.cls_fake)?;
            acc.d_real += nn::scalar(&d_real.mean_all()?)?;
            acc.d_fake += nn::scalar(&d_fake.mean_all()?)?;
        }
        let n = steps as f64;
        for v in [
            &mut acc.gen,
            &mut acc.disc,
            &mut acc.gen_adv,
            &mut acc.disc_adv,
            &mut acc.l2,
            &mut acc.cls_real,
            &mut acc.cls_fake,
            &mut acc.d_real,
            &mut acc.d_fake,
        ] {
            *v /= n;
        }
        log::info!(
            "gan epoch {epoch}: gen {:.4} disc {:.4} l2 {:.4}",
            acc.gen,
            acc.disc,
            acc.l2
        );
        history.push(acc);

        let last = epoch + 1 == cfg.epochs;
        let periodic = cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
        if let Some(path) = checkpoint_path {
            if last || periodic {
                gan_checkpoint(&generator, &discriminator, cfg, &identities, &history, Some(&rng))?
                    .save(path)?;
            }
        }
    }
    Ok(GanOutcome {
        generator,
        discriminator,
        history,
        identities,
    })
}
