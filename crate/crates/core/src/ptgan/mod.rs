//! The pose-transformation GAN and the descriptor backbones it relies on.
//!
//! `G(F_R1(I_i), p_j)` renders the person of image `I_i` in pose `p_j`. The
//! discriminator scores realism and predicts the identity; training pairs are
//! two images of the same person.

mod backbone;
mod discriminator;
mod generator;
pub mod losses;
mod pairs;
mod train;

pub use self::backbone::{
    class_index, finetune_reid, holdout_by_image, holdout_indices, BackboneVariant, FeatureExtractor,
    FinetuneConfig, FinetuneHistory, TrunkSpec,
};
pub use self::discriminator::{Discriminator, DiscriminatorSpec};
pub use self::generator::{Generator, GeneratorSpec};
pub use self::losses::{LossParts, LossWeights, Reduction};
pub use self::pairs::{PairIndex, PairSampler};
pub use self::train::{train_ptgan, EpochLosses, GanOutcome, GanTrainConfig};
pub use crate::cluster::encode_pose;
