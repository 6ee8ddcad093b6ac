use serde::{Deserialize, Serialize};

use super::FusionNet;
use crate::cluster::PoseSet;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::ptgan::{FeatureExtractor, Generator};

/// Which backbone describes the source image fed to the skip connection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceBackbone {
    R1,
    #[default]
    R2,
}

/// Anything that maps images to re-ID descriptors.
pub trait Describer {
    fn describe(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>>;
}

fn resized(images: &[&Image], size: (usize, usize)) -> Vec<Image> {
    images.iter().map(|img| img.resize(size.0, size.1)).collect()
}

/// The backbone alone, used as the baseline descriptor.
impl Describer for FeatureExtractor {
    fn describe(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
        let imgs = resized(images, self.spec.input_size);
        self.extract(&imgs.iter().collect::<Vec<_>>())
    }
}

/// Per-image source descriptor plus the descriptors of its `N` renderings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FusionInputs {
    pub source: Vec<Vec<f32>>,
    pub generated: Vec<Vec<Vec<f32>>>,
}

const CHUNK: usize = 16;

/// Renders every image in every canonical pose and describes the results.
pub fn compute_fusion_inputs(
    f_r1: &FeatureExtractor,
    f_r2: &FeatureExtractor,
    generator: &Generator,
    pose_set: &PoseSet,
    source: SourceBackbone,
    images: &[&Image],
) -> Result<FusionInputs> {
    if pose_set.is_empty() {
        return Err(Error::InvalidInput("pose set is empty".into()));
    }
    if source == SourceBackbone::R1 && f_r1.output_dim() != f_r2.output_dim() {
        return Err(Error::Config("F_R1 and F_R2 dimensions differ".into()));
    }
    let n = pose_set.len();
    let mut out = FusionInputs::default();
    for chunk in images.chunks(CHUNK) {
        let desc1 = f_r1.describe(chunk)?;
        let rendered = generator.generate_batch(&desc1, &pose_set.poses)?;
        let gen_desc = f_r2.describe(&rendered.iter().collect::<Vec<_>>())?;
        let src = match source {
            SourceBackbone::R1 => desc1,
            SourceBackbone::R2 => f_r2.describe(chunk)?,
        };
        out.source.extend(src);
        out.generated.extend(gen_desc.chunks(n).map(|c| c.to_vec()));
    }
    Ok(out)
}

/// Optional components, checked by [`PipelineParts::assemble`].
#[derive(Default)]
pub struct PipelineParts {
    pub f_r1: Option<FeatureExtractor>,
    pub f_r2: Option<FeatureExtractor>,
    pub generator: Option<Generator>,
    pub pose_set: Option<PoseSet>,
    pub fusion: Option<FusionNet>,
    pub source: SourceBackbone,
}

impl PipelineParts {
    pub fn assemble(self) -> Result<ReidPipeline> {
        let pipeline = ReidPipeline {
            f_r1: self.f_r1.ok_or(Error::MissingComponent("F_R1 backbone"))?,
            f_r2: self.f_r2.ok_or(Error::MissingComponent("F_R2 backbone"))?,
            generator: self.generator.ok_or(Error::MissingComponent("generator"))?,
            pose_set: self.pose_set.ok_or(Error::MissingComponent("pose set"))?,
            fusion: self.fusion.ok_or(Error::MissingComponent("fusion network"))?,
            source: self.source,
        };
        pipeline.check()?;
        Ok(pipeline)
    }
}

/// The complete chain: `F_FN(F_src(I), F_R2(G(F_R1(I), p_1..p_N)))`.
pub struct ReidPipeline {
    pub f_r1: FeatureExtractor,
    pub f_r2: FeatureExtractor,
    pub generator: Generator,
    pub pose_set: PoseSet,
    pub fusion: FusionNet,
    pub source: SourceBackbone,
}

impl ReidPipeline {
    fn check(&self) -> Result<()> {
        if self.fusion.spec.n != self.pose_set.len() {
            return Err(Error::Config(format!(
                "fusion expects {} views, pose set has {}",
                self.fusion.spec.n,
                self.pose_set.len()
            )));
        }
        if self.fusion.spec.d != self.f_r2.output_dim() {
            return Err(Error::Config("fusion and F_R2 dimensions differ".into()));
        }
        if self.generator.spec.desc_dim != self.f_r1.output_dim() {
            return Err(Error::Config("generator and F_R1 dimensions differ".into()));
        }
        Ok(())
    }

    /// The fused re-ID feature of one image.
    pub fn extract_fused(&self, image: &Image) -> Result<Vec<f32>> {
        Ok(self.describe(&[image])?.remove(0))
    }
}

impl Describer for ReidPipeline {
    fn describe(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
        let inputs = compute_fusion_inputs(
            &self.f_r1,
            &self.f_r2,
            &self.generator,
            &self.pose_set,
            self.source,
            images,
        )?;
        self.fusion.fuse_batch(&inputs.source, &inputs.generated)
    }
}
