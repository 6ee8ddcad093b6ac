//! Experiment configuration: built-in defaults, overlaid by a TOML file,
//! overlaid by `--set key=value` flags.

use std::path::{Path, PathBuf};

use posefuse_core::augment::AugmentConfig;
use posefuse_core::cluster::ClusterConfig;
use posefuse_core::dataset::{Naming, Protocol, ToySpec};
use posefuse_core::fusion::{FusionSpec, FusionTrainConfig, SourceBackbone};
use posefuse_core::ptgan::{DiscriminatorSpec, FinetuneConfig, GanTrainConfig, GeneratorSpec, TrunkSpec};
use posefuse_core::retrieval::{EvalOptions, Metric, Pooling, RerankParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Image directory; unset means the toy set written by `synth`.
    pub root: Option<PathBuf>,
    pub naming: Naming,
    pub protocol: Protocol,
    /// Every image is resized to this `(height, width)`.
    pub image_size: (usize, usize),
    pub toy: ToySpec,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            root: None,
            naming: Naming::Market1501,
            protocol: Protocol::Market1501,
            image_size: (128, 64),
            toy: ToySpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    /// Descriptor dimension `D`.
    pub output_dim: usize,
    pub channels: Vec<usize>,
    /// Weight manifest of a pretrained `F_R1`; unset means a seeded
    /// random-init trunk.
    pub pretrained: Option<PathBuf>,
    pub finetune: FinetuneConfig,
}

impl Default for BackboneSection {
    fn default() -> Self {
        Self {
            output_dim: 2048,
            channels: TrunkSpec::default().channels,
            pretrained: None,
            finetune: FinetuneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanSection {
    pub base_channels: usize,
    pub residual_blocks: usize,
    pub disc_base_channels: usize,
    pub disc_max_layers: usize,
    pub train: GanTrainConfig,
}

impl Default for GanSection {
    fn default() -> Self {
        let g = GeneratorSpec::default();
        let d = DiscriminatorSpec::default();
        Self {
            base_channels: g.base_channels,
            residual_blocks: g.residual_blocks,
            disc_base_channels: d.base_channels,
            disc_max_layers: d.max_layers,
            train: GanTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub dropout: f64,
    pub identity_init: bool,
    pub source: SourceBackbone,
    pub train: FusionTrainConfig,
}

impl Default for FusionSection {
    fn default() -> Self {
        let spec = FusionSpec::default();
        Self {
            dropout: spec.dropout,
            identity_init: spec.identity_init,
            source: SourceBackbone::default(),
            train: FusionTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub metric: Metric,
    pub rerank: bool,
    pub rerank_params: RerankParams,
    pub multi_query: bool,
    pub pooling: Pooling,
    pub max_rank: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let o = EvalOptions::default();
        Self {
            metric: o.metric,
            rerank: false,
            rerank_params: RerankParams::default(),
            multi_query: o.multi_query,
            pooling: o.pooling,
            max_rank: o.max_rank,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Every stage seed derives from this one.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub augment: AugmentConfig,
    pub backbone: BackboneSection,
    pub cluster: ClusterConfig,
    pub gan: GanSection,
    pub fusion: FusionSection,
    pub eval: EvalSection,
}

/// Offsets added to the global seed, one per consumer.
mod seed_offset {
    pub const SPLIT: u64 = 0;
    pub const F_R1: u64 = 1;
    pub const FINETUNE: u64 = 2;
    pub const CLUSTER: u64 = 3;
    pub const GAN: u64 = 4;
    pub const FUSION: u64 = 5;
    pub const AUGMENT: u64 = 6;
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        let (h, w) = self.dataset.image_size;
        if h == 0 || w == 0 {
            return Err(CliError::Config("dataset.image_size must be positive".into()));
        }
        if self.backbone.output_dim == 0 {
            return Err(CliError::Config("backbone.output_dim must be positive".into()));
        }
        self.cluster.validate()?;
        self.gan.train.validate()?;
        self.generator_spec().validate()?;
        self.trunk_spec().validate()?;
        if !(0.0..1.0).contains(&self.fusion.dropout) {
            return Err(CliError::Config("fusion.dropout must lie in [0, 1)".into()));
        }
        if self.eval.max_rank == 0 {
            return Err(CliError::Config("eval.max_rank must be positive".into()));
        }
        Ok(())
    }

    pub fn data_root(&self) -> PathBuf {
        self.dataset.root.clone().unwrap_or_else(|| self.output_dir.join("data"))
    }

    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(seed_offset::SPLIT)
    }

    pub fn f_r1_seed(&self) -> u64 {
        self.seed.wrapping_add(seed_offset::F_R1)
    }

    pub fn trunk_spec(&self) -> TrunkSpec {
        TrunkSpec {
            channels: self.backbone.channels.clone(),
            output_dim: self.backbone.output_dim,
            input_size: self.dataset.image_size,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            seed: self.seed.wrapping_add(seed_offset::FINETUNE),
            ..self.backbone.finetune.clone()
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            seed: self.seed.wrapping_add(seed_offset::AUGMENT),
            ..self.augment.clone()
        }
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            seed: self.seed.wrapping_add(seed_offset::CLUSTER),
            ..self.cluster.clone()
        }
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            desc_dim: self.backbone.output_dim,
            image_size: self.dataset.image_size,
            base_channels: self.gan.base_channels,
            residual_blocks: self.gan.residual_blocks,
        }
    }

    pub fn discriminator_spec(&self, num_classes: usize) -> DiscriminatorSpec {
        DiscriminatorSpec {
            image_size: self.dataset.image_size,
            base_channels: self.gan.disc_base_channels,
            num_classes,
            max_layers: self.gan.disc_max_layers,
        }
    }

    pub fn gan_train_config(&self) -> GanTrainConfig {
        GanTrainConfig {
            seed: self.seed.wrapping_add(seed_offset::GAN),
            ..self.gan.train.clone()
        }
    }

    pub fn fusion_spec(&self, n: usize) -> FusionSpec {
        FusionSpec {
            n,
            d: self.backbone.output_dim,
            num_classes: 0,
            dropout: self.fusion.dropout,
            identity_init: self.fusion.identity_init,
        }
    }

    pub fn fusion_train_config(&self) -> FusionTrainConfig {
        FusionTrainConfig {
            seed: self.seed.wrapping_add(seed_offset::FUSION),
            ..self.fusion.train.clone()
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            metric: self.eval.metric,
            protocol: self.dataset.protocol,
            rerank: self.eval.rerank.then_some(self.eval.rerank_params),
            multi_query: self.eval.multi_query,
            pooling: self.eval.pooling,
            max_rank: self.eval.max_rank,
        }
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    fn to_value(&self) -> CliResult<toml::Value> {
        toml::Value::try_from(self).map_err(|e| CliError::Config(e.to_string()))
    }

    fn from_value(v: toml::Value) -> CliResult<Self> {
        v.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses the right-hand side of `--set key=value`: any TOML value, or a
/// bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> CliResult<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{key}: {part} is not a section")))?;
        if i + 1 == parts.len() {
            table.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = table
            .entry((*part).to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Ok(())
}

/// Builds the effective configuration. `output_dir` (flag or environment)
/// wins over the file.
pub fn load_config(
    file: Option<&Path>,
    overrides: &[String],
    output_dir: Option<&Path>,
) -> CliResult<ExperimentConfig> {
    let mut value = ExperimentConfig::default().to_value()?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let file_value: toml::Value = text
            .parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut value, file_value);
    }
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {item:?} is not key=value")))?;
        set_path(&mut value, key.trim(), parse_override_value(raw.trim()))?;
    }
    let mut cfg = ExperimentConfig::from_value(value)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir.to_path_buf();
    }
    if cfg.output_dir.as_os_str().is_empty() {
        cfg.output_dir = PathBuf::from("runs");
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use posefuse_core::cluster::{ClusterMethod, ClusterMode};

    #[test]
    fn defaults_encode_the_published_hyperparameters() {
        let c = ExperimentConfig::default();
        assert_eq!(c.dataset.image_size, (128, 64));
        assert_eq!(c.backbone.output_dim, 2048);
        assert_eq!(c.gan.train.adam_beta1, 0.5);
        assert_eq!(c.gan.train.adam_beta2, 0.999);
        assert_eq!(c.fusion.dropout, 0.6);
        assert_eq!(c.augment.rotation_deg, 20.0);
        assert_eq!(c.cluster.n_cbj, 3);
        assert_eq!(c.cluster.method, ClusterMethod::Gmm);
        assert_eq!(c.cluster.mode, ClusterMode::FullBody);
        assert_eq!(c.cluster.num_poses, 12);
    }

    #[test]
    fn layering_file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "seed = 5\n[cluster]\nnum_poses = 8\nmethod = \"kmeans\"\n[eval]\nmetric = \"cosine\"\n",
        )
        .unwrap();
        let cfg = load_config(
            Some(&path),
            &["cluster.num_poses=16".into(), "cluster.mode=bodyjoint".into()],
            Some(Path::new("/tmp/out")),
        )
        .unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.cluster.num_poses, 16);
        assert_eq!(cfg.cluster.method, ClusterMethod::Kmeans);
        assert_eq!(cfg.cluster.mode, ClusterMode::BodyJoint);
        assert_eq!(cfg.eval.metric, Metric::Cosine);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/out"));
        // Untouched sections keep their defaults.
        assert_eq!(cfg.fusion.dropout, 0.6);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.gan.train.steps_per_epoch = Some(3);
        cfg.dataset.root = Some("/data".into());
        let text = cfg.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_input_is_a_config_error() {
        for bad in ["cluster.num_poses=0", "nonsense", "bogus.key=1", "fusion.dropout=1.5"] {
            let err = load_config(None, &[bad.to_string()], None).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}: {err}");
        }
    }

    #[test]
    fn stage_seeds_follow_the_global_seed() {
        let mut a = ExperimentConfig::default();
        a.seed = 10;
        let mut b = a.clone();
        b.seed = 11;
        assert_ne!(a.gan_train_config().seed, b.gan_train_config().seed);
        assert_ne!(a.cluster_config().seed, a.fusion_train_config().seed);
    }
}
