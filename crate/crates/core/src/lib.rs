//! Pose-transfer person re-identification.
//!
//! The pipeline renders every probe image in a small set of canonical poses
//! with a pose-conditioned generator, describes the original and the
//! synthesized views with convolutional backbones, and fuses the descriptors
//! into a single viewpoint-invariant feature used for gallery retrieval.
//!
//! Module map:
//!
//! - [`dataset`]: samples, BODY_25 pose vectors, ingestion, splits and a
//!   synthetic stick-figure dataset.
//! - [`augment`]: training-time image augmentation.
//! - [`cluster`]: K-means / diagonal GMM pose clustering into a [`PoseSet`].
//! - [`nn`]: parameter storage, layers, checkpoints and weight manifests.
//! - [`ptgan`]: backbones, generator, discriminator, losses and GAN training.
//! - [`fusion`]: FusionNet, its training loop and the end-to-end pipeline.
//! - [`retrieval`]: gallery index, ranking, CMC/mAP, re-ranking, evaluation.

pub mod augment;
pub mod cluster;
pub mod dataset;
mod error;
pub mod fusion;
pub mod image;
pub mod nn;
pub mod ptgan;
pub mod retrieval;

pub use crate::cluster::{ClusterConfig, ClusterMethod, ClusterMode, PoseSet};
pub use crate::dataset::{DatasetSplit, PoseVector, Protocol, Sample, SampleMeta, ToySpec};
pub use crate::error::{Error, Result};
pub use crate::fusion::{FusionNet, ReidPipeline};
pub use crate::image::Image;
pub use crate::ptgan::{Discriminator, FeatureExtractor, Generator};
pub use crate::retrieval::{EvalReport, GalleryIndex, Metric, RetrievalResult};
