//! GAN objectives: adversarial, pixel L2, identity classification and their
//! weighted combination.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
}

fn clamp_prob(p: &Tensor) -> Result<Tensor> {
    Ok(p.clamp(PROB_EPS, 1.0 - PROB_EPS)?)
}

/// `mean(log d_real + log(1 - d_fake))`, the quantity the discriminator
/// ascends.
pub fn adversarial_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    let real = clamp_prob(d_real)?.log()?;
    let fake = clamp_prob(d_fake)?.affine(-1.0, 1.0)?.log()?;
    Ok((real + fake)?.mean_all()?)
}

/// Discriminator objective with soft real targets `t`:
/// `-mean(t log d_real + (1 - t) log(1 - d_real)) - mean(log(1 - d_fake))`.
/// With `t = 1` this is `-adversarial_loss`.
pub fn discriminator_adv_loss(d_real: &Tensor, d_fake: &Tensor, real_targets: &Tensor) -> Result<Tensor> {
    let dr = clamp_prob(d_real)?;
    let real = (real_targets.mul(&dr.log()?)?
        + real_targets.affine(-1.0, 1.0)?.mul(&dr.affine(-1.0, 1.0)?.log()?)?)?
    .mean_all()?;
    let fake = clamp_prob(d_fake)?.affine(-1.0, 1.0)?.log()?.mean_all()?;
    Ok((real + fake)?.neg()?)
}

/// Generator adversarial term: `mean(log(1 - d_fake))`, or the
/// non-saturating `-mean(log d_fake)`.
pub fn generator_adv_loss(d_fake: &Tensor, non_saturating: bool) -> Result<Tensor> {
    let df = clamp_prob(d_fake)?;
    if non_saturating {
        Ok(df.log()?.mean_all()?.neg()?)
    } else {
        Ok(df.affine(-1.0, 1.0)?.log()?.mean_all()?)
    }
}

/// Batch mean of the per-image L2 norm of `target - generated`.
pub fn l2_loss(target: &Tensor, generated: &Tensor) -> Result<Tensor> {
    if target.dims() != generated.dims() {
        return Err(Error::InvalidInput(format!(
            "l2_loss shape mismatch: {:?} vs {:?}",
            target.dims(),
            generated.dims()
        )));
    }
    let diff = (target - generated)?.flatten_from(1)?;
    Ok(diff.sqr()?.sum(D::Minus1)?.sqrt()?.mean_all()?)
}

/// Categorical cross-entropy of `logits` `[B, C]` against `labels` `[B]`
/// (`u32`).
pub fn classification_loss(logits: &Tensor, labels: &Tensor, reduction: Reduction) -> Result<Tensor> {
    let (b, c) = logits.dims2()?;
    let lv = labels.to_dtype(DType::U32)?;
    if lv.dims() != [b] {
        return Err(Error::shape(b, lv.elem_count()));
    }
    if lv.to_vec1::<u32>()?.iter().any(|&l| l as usize >= c) {
        return Err(Error::InvalidInput(format!("label out of range for {c} classes")));
    }
    let logp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let picked = logp.gather(&lv.unsqueeze(1)?, 1)?.squeeze(1)?.neg()?;
    Ok(match reduction {
        Reduction::Sum => picked.sum_all()?,
        Reduction::Mean => picked.mean_all()?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub adv: f64,
    pub l2: f64,
    pub cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adv: 1.0,
            l2: 1.0,
            cls: 1.0,
        }
    }
}

/// Per-batch loss components, each already reduced to a scalar.
#[derive(Clone, Debug)]
pub struct LossParts<T> {
    pub gen_adv: T,
    pub disc_adv: T,
    pub l2: T,
    pub cls_real: T,
    pub cls_fake: T,
}

/// Combines the parts into the (generator, discriminator) objectives.
pub fn total_gan_loss(parts: &LossParts<Tensor>, w: &LossWeights) -> Result<(Tensor, Tensor)> {
    let gen = ((parts.gen_adv.affine(w.adv, 0.0)? + parts.l2.affine(w.l2, 0.0)?)?
        + parts.cls_fake.affine(w.cls, 0.0)?)?;
    let disc = (parts.disc_adv.affine(w.adv, 0.0)? + parts.cls_real.affine(w.cls, 0.0)?)?;
    Ok((gen, disc))
}

/// Scalar mirror of [`total_gan_loss`].
pub fn total_gan_loss_f64(parts: &LossParts<f64>, w: &LossWeights) -> (f64, f64) {
    (
        w.adv * parts.gen_adv + w.l2 * parts.l2 + w.cls * parts.cls_fake,
        w.adv * parts.disc_adv + w.cls * parts.cls_real,
    )
}
