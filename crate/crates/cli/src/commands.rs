use std::fs;
use std::path::{Path, PathBuf};

use posefuse_core::cluster::{derive_pose_set, ClusterMethod, ClusterMode, PoseSet};
use posefuse_core::dataset::{load_image_dir, make_split, render_skeleton, synth_toy_dataset, write_toy_dataset};
use posefuse_core::fusion::{compute_fusion_inputs, train_fusion, Describer, FusionHistory, PipelineParts};
use posefuse_core::nn::Checkpoint;
use posefuse_core::ptgan::{finetune_reid, train_ptgan, BackboneVariant, EpochLosses, GanOutcome};
use posefuse_core::retrieval::{describe_samples, evaluate, write_descriptor_file, DescriptorFile, DescriptorMeta};
use posefuse_core::{DatasetSplit, EvalReport, FeatureExtractor, FusionNet, Generator, Image, ReidPipeline, Sample};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::plot::{bar_chart, line_chart, Series};

/// Where every artifact lives under the output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            root: cfg.output_dir.clone(),
        }
    }

    pub fn pose_set(&self) -> PathBuf {
        self.root.join("pose_set.json")
    }
    pub fn f_r1(&self) -> PathBuf {
        self.root.join("backbones/f_r1.ck")
    }
    pub fn f_r2(&self) -> PathBuf {
        self.root.join("backbones/f_r2.ck")
    }
    pub fn gan_dir(&self) -> PathBuf {
        self.root.join("gan")
    }
    pub fn gan(&self) -> PathBuf {
        self.gan_dir().join("gan.ck")
    }
    pub fn fusion_dir(&self) -> PathBuf {
        self.root.join("fusion")
    }
    pub fn fusion(&self) -> PathBuf {
        self.fusion_dir().join("fusion.ck")
    }
    pub fn index_dir(&self) -> PathBuf {
        self.root.join("index")
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn ablation_dir(&self) -> PathBuf {
        self.root.join("ablation")
    }
    pub fn generate(&self) -> PathBuf {
        self.root.join("generate/grid.png")
    }
}

fn create_parent(path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn save_checkpoint(path: &Path, ck: &Checkpoint) -> CliResult<()> {
    create_parent(path)?;
    Ok(ck.save(path)?)
}

fn require(path: &Path, what: &str, command: &'static str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingPrerequisite {
            what: format!("{what} ({})", path.display()),
            command,
        })
    }
}

fn load_checkpoint(path: &Path, what: &str, command: &'static str, mb: &mut ManifestBuilder) -> CliResult<Checkpoint> {
    require(path, what, command)?;
    mb.input(path)?;
    Ok(Checkpoint::load(path)?)
}

fn load_f_r1(layout: &Layout, mb: &mut ManifestBuilder) -> CliResult<FeatureExtractor> {
    let ck = load_checkpoint(&layout.f_r1(), "F_R1 backbone", "train-gan", mb)?;
    let fe = FeatureExtractor::from_checkpoint(&ck)?;
    mb.component("f_r1", fe.store().content_hash()?);
    Ok(fe)
}

fn load_f_r2(layout: &Layout, mb: &mut ManifestBuilder) -> CliResult<FeatureExtractor> {
    let ck = load_checkpoint(&layout.f_r2(), "F_R2 backbone", "train-fusion", mb)?;
    let fe = FeatureExtractor::from_checkpoint(&ck)?;
    mb.component("f_r2", fe.store().content_hash()?);
    Ok(fe)
}

fn load_generator(layout: &Layout, mb: &mut ManifestBuilder) -> CliResult<Generator> {
    let ck = load_checkpoint(&layout.gan(), "GAN checkpoint", "train-gan", mb)?;
    let (outcome, _) = GanOutcome::from_checkpoint(&ck)?;
    mb.component("generator", outcome.generator.store().content_hash()?);
    Ok(outcome.generator)
}

fn load_pose_set(layout: &Layout, mb: &mut ManifestBuilder) -> CliResult<PoseSet> {
    let path = layout.pose_set();
    require(&path, "pose set", "cluster")?;
    mb.input(&path)?;
    Ok(PoseSet::load(&path)?)
}

fn load_fusion(layout: &Layout, mb: &mut ManifestBuilder) -> CliResult<FusionNet> {
    let ck = load_checkpoint(&layout.fusion(), "fusion checkpoint", "train-fusion", mb)?;
    let net = FusionNet::from_checkpoint(&ck)?;
    mb.component("fusion", net.store().content_hash()?);
    Ok(net)
}

/// Loads, resizes and splits the configured dataset.
pub fn load_split(cfg: &ExperimentConfig, mb: &mut ManifestBuilder) -> CliResult<DatasetSplit> {
    let root = cfg.data_root();
    if !root.is_dir() {
        return Err(match cfg.dataset.root {
            None => CliError::MissingPrerequisite {
                what: format!("dataset ({})", root.display()),
                command: "synth",
            },
            Some(_) => CliError::Config(format!("dataset.root {} is not a directory", root.display())),
        });
    }
    mb.input(&root)?;
    let (h, w) = cfg.dataset.image_size;
    let samples: Vec<Sample> = load_image_dir(&root, cfg.dataset.naming)?
        .into_iter()
        .map(|mut s| {
            if s.image.shape() != (h, w) {
                s.image = s.image.resize(h, w);
            }
            if let Ok(rel) = s.meta.path.strip_prefix(&root) {
                s.meta.path = rel.to_path_buf();
            }
            s
        })
        .collect();
    Ok(make_split(&samples, cfg.dataset.protocol, cfg.split_seed())?)
}

pub fn cmd_synth(cfg: &ExperimentConfig, mb: &mut ManifestBuilder) -> CliResult<()> {
    let dir = cfg.data_root();
    let (samples, _) = synth_toy_dataset(&cfg.dataset.toy)?;
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    write_toy_dataset(&dir, &samples)?;
    log::info!("wrote {} toy images to {}", samples.len(), dir.display());
    mb.output(&dir)
}

fn fit_pose_set(cfg: &ExperimentConfig, split: &DatasetSplit) -> CliResult<PoseSet> {
    let poses: Vec<_> = split
        .train
        .iter()
        .filter(|s| s.has_pose())
        .filter_map(|s| s.pose().cloned())
        .collect();
    if poses.is_empty() {
        return Err(posefuse_core::Error::InsufficientData("no training sample carries a pose".into()).into());
    }
    Ok(derive_pose_set(&poses, &cfg.cluster_config())?)
}

pub fn cmd_cluster(cfg: &ExperimentConfig, mb: &mut ManifestBuilder) -> CliResult<()> {
    let layout = Layout::new(cfg);
    let split = load_split(cfg, mb)?;
    let set = fit_pose_set(cfg, &split)?;
    let path = layout.pose_set();
    create_parent(&path)?;
    set.save(&path)?;
    log::info!("{} canonical poses written to {}", set.len(), path.display());
    mb.output(&path)
}

fn build_f_r1(cfg: &ExperimentConfig) -> CliResult<FeatureExtractor> {
    let fe = match &cfg.backbone.pretrained {
        Some(path) => FeatureExtractor::from_manifest(path, BackboneVariant::Generic)?,
        None => FeatureExtractor::toy(cfg.trunk_spec(), cfg.f_r1_seed(), candle_core::DType::F32)?,
    };
    if fe.output_dim() != cfg.backbone.output_dim {
        return Err(CliError::Config(format!(
            "pretrained backbone yields {}-d descriptors, backbone.output_dim is {}",
            fe.output_dim(),
            cfg.backbone.output_dim
        )));
    }
    Ok(fe)
}

fn gan_plot(history: &[EpochLosses]) -> String {
    let series = |label, f: fn(&EpochLosses) -> f64| Series {
        label,
        points: history.iter().map(|e| (e.epoch as f64, f(e))).collect(),
    };
    line_chart(
        "pt-GAN losses",
        "epoch",
        "loss",
        &[
            series("generator", |e| e.gen),
            series("discriminator", |e| e.disc),
            series("L2", |e| e.l2),
        ],
        None,
    )
}

pub fn cmd_train_gan(cfg: &ExperimentConfig, mb: &mut ManifestBuilder) -> CliResult<()> {
    let layout = Layout::new(cfg);
    let split = load_split(cfg, mb)?;
    if let Some(p) = &cfg.backbone.pretrained {
        mb.input(p)?;
    }
    let f_r1 = build_f_r1(cfg)?;
    save_checkpoint(&layout.f_r1(), &f_r1.to_checkpoint()?)?;
    mb.component("f_r1", f_r1.store().content_hash()?);
    mb.output(&layout.f_r1())?;

    let gan_cfg = cfg.gan_train_config();
    let outcome = train_ptgan(
        &split.train,
        &f_r1,
        cfg.generator_spec(),
        cfg.discriminator_spec(0),
        &gan_cfg,
        &cfg.augment_config(),
        None,
    )?;
    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        log::info!("L2 loss {:.4} -> {:.4} over {} epochs", first.l2, last.l2, outcome.history.len());
    }
    save_checkpoint(&layout.gan(), &outcome.to_checkpoint(&gan_cfg, None)?)?;
    let history = layout.gan_dir().join("history.json");
    write_json(&history, &outcome.history)?;
    let plot = layout.gan_dir().join("losses.svg");
    write_text(&plot, &gan_plot(&outcome.history))?;
    mb.component("generator", outcome.generator.store().content_hash()?);
    mb.component("discriminator", outcome.discriminator.store().content_hash()?);
    for p in [layout.gan(), history, plot] {
        mb.output(&p)?;
    }
    Ok(())
}

fn train_fusion_net(
    cfg: &ExperimentConfig,
    f_r1: &FeatureExtractor,
    f_r2: &FeatureExtractor,
    generator: &Generator,
    pose_set: &PoseSet,
    train: &[Sample],
) -> CliResult<(FusionNet, FusionHistory)> {
    let images: Vec<&Image> = train.iter().map(|s| &s.image).collect();
    let inputs = compute_fusion_inputs(f_r1, f_r2, generator, pose_set, cfg.fusion.source, &images)?;
    let ids: Vec<u32> = train.iter().map(Sample::identity).collect();
    Ok(train_fusion(
        &inputs,
        &ids,
        cfg.fusion_spec(pose_set.len()),
        &cfg.fusion_train_config(),
    )?)
}

fn finetune_f_r2(
    cfg: &ExperimentConfig,
    layout: &Layout,
    f_r1: &FeatureExtractor,
    split: &DatasetSplit,
    mb: &mut ManifestBuilder,
) -> CliResult<FeatureExtractor> {
    let (f_r2, history) = finetune_reid(f_r1, &split.train, &cfg.finetune_config(), &cfg.augment_config())?;
    log::info!(
        "F_R2 finetuned, best epoch {} of {}",
        history.best_epoch,
        history.val_accuracy.len()
    );
    save_checkpoint(&layout.f_r2(), &f_r2.to_checkpoint()?)?;
    let hist = layout.root.join("backbones/f_r2_history.json");
    write_json(&hist, &history)?;
    mb.component("f_r2", f_r2.store().content_hash()?);
    mb.output(&layout.f_r2())?;
    mb.output(&hist)?;
    Ok(f_r2)
}

pub fn cmd_train_fusion(cfg: &ExperimentConfig, mb: &mut ManifestBuilder) -> CliResult<()> {
    let layout = Layout::new(cfg);
    let f_r1 = load_f_r1(&layout, mb)?;
    let generator = load_generator(&layout, mb)?;
    let pose_set = load_pose_set(&layout, mb)?;
    let split = load_split(cfg, mb)?;
    let f_r2 = finetune_f_r2(cfg, &layout, &f_r1, &split, mb)?;
    let (net, history) = train_fusion_net(cfg, &f_r1, &f_r2, &generator, &pose_set, &split.train)?;
    log::info!(
        "fusion trained, best epoch {}, validation accuracy {:?}",
        history.best_epoch,
        history.val_accuracy.get(history.best_epoch)
    );
    save_checkpoint(&layout.fusion(), &net.to_checkpoint(history.best_epoch)?)?;
    let hist = layout.fusion_dir().join("history.json");
    write_json(&hist, &history)?;
    mb.component("fusion", net.store().content_hash()?);
    mb.output(&layout.fusion())?;
    mb.output(&hist)
}

const GRID_GAP: usize = 2;

/// Two rows: the canonical skeletons over the generated images, with the
/// source image in the first column.
pub fn image_grid(source: &Image, skeletons: &[Image], generated: &[Image]) -> Image {
    let (h, w) = source.shape();
    let cols = generated.len() + 1;
    let mut grid = Image::filled(2 * h + GRID_GAP, cols * w + (cols - 1) * GRID_GAP, [1.0; 3]);
    grid.paste(source, h + GRID_GAP, 0);
    for (i, (sk, g)) in skeletons.iter().zip(generated).enumerate() {
        let left = (i + 1) * (w + GRID_GAP);
        grid.paste(sk, 0, left);
        grid.paste(g, h + GRID_GAP, left);
    }
    grid
}

pub fn cmd_generate(
    cfg: &ExperimentConfig,
    image: Option<&Path>,
    out: Option<&Path>,
    mb: &mut ManifestBuilder,
) -> CliResult<PathBuf> {
    let layout = Layout::new(cfg);
    let f_r1 = load_f_r1(&layout, mb)?;
    let generator = load_generator(&layout, mb)?;
    let pose_set = load_pose_set(&layout, mb)?;
    let (h, w) = cfg.dataset.image_size;
    let source = match image {
        Some(path) => {
            mb.input(path)?;
            mb.arg("image", path.display());
            Image::load(path)?.resize(h, w)
        }
        None => {
            let split = load_split(cfg, mb)?;
            split
                .query
                .first()
                .or(split.train.first())
                .map(|s| s.image.clone())
                .ok_or_else(|| posefuse_core::Error::NoSamples(cfg.data_root()))?
        }
    };
    let desc = f_r1.describe(&[&source])?.remove(0);
    let generated = generator.generate(&desc, &pose_set.poses)?;
    let skeletons: Vec<Image> = pose_set.poses.iter().map(|p| render_skeleton(p, h, w)).collect();
    let grid = image_grid(&source, &skeletons, &generated);
    let path = match out {
        Some(p) => {
            mb.arg("out", p.display());
            p.to_path_buf()
        }
        None => layout.generate(),
    };
    create_parent(&path)?;
    grid.save_png(&path)?;
    mb.output(&path)?;
    Ok(path)
}

/// Checks that every artifact exists (fusion first, so the most downstream
/// missing stage is named), then loads them.
fn load_pipeline(cfg: &ExperimentConfig, layout: &Layout, mb: &mut ManifestBuilder) -> CliResult<ReidPipeline> {
    require(&layout.fusion(), "fusion checkpoint", "train-fusion")?;
    require(&layout.f_r2(), "F_R2 backbone", "train-fusion")?;
    let parts = PipelineParts {
        f_r1: Some(load_f_r1(layout, mb)?),
        generator: Some(load_generator(layout, mb)?),
        pose_set: Some(load_pose_set(layout, mb)?),
        f_r2: Some(load_f_r2(layout, mb)?),
        fusion: Some(load_fusion(layout, mb)?),
        source: cfg.fusion.source,
    };
    Ok(parts.assemble()?)
}

fn descriptor_file(cfg: &ExperimentConfig, descriptors: Vec<Vec<f32>>, samples: &[Sample]) -> DescriptorFile {
    DescriptorFile {
        metric: cfg.eval.metric,
        descriptors,
        meta: DescriptorMeta {
            paths: samples.iter().map(|s| s.meta.path.display().to_string()).collect(),
            identities: samples.iter().map(Sample::identity).collect(),
            cameras: samples.iter().map(Sample::camera).collect(),
        },
    }
}

pub fn cmd_index(cfg: &ExperimentConfig, baseline: bool, mb: &mut ManifestBuilder) -> CliResult<()> {
    let layout = Layout::new(cfg);
    let pipeline = load_pipeline(cfg, &layout, mb)?;
    let split = load_split(cfg, mb)?;
    mb.arg("baseline", baseline);
    let describer: &dyn Describer = if baseline { &pipeline.f_r2 } else { &pipeline };
    let prefix = if baseline { "baseline_" } else { "" };
    fs::create_dir_all(layout.index_dir()).map_err(|e| CliError::io(layout.index_dir(), e))?;
    for (name, samples) in [("gallery", &split.gallery), ("query", &split.query)] {
        let descs = describe_samples(describer, samples)?;
        let path = layout.index_dir().join(format!("{prefix}{name}.desc"));
        write_descriptor_file(&path, &descriptor_file(cfg, descs, samples))?;
        log::info!("indexed {} {name} images into {}", samples.len(), path.display());
        mb.output(&path)?;
        mb.output(&posefuse_core::retrieval::sidecar_path(&path))?;
    }
    Ok(())
}

fn cmc_plot(reports: &[(&str, &EvalReport)]) -> String {
    let series: Vec<Series<'_>> = reports
        .iter()
        .map(|(label, r)| Series {
            label,
            points: r.cmc.iter().enumerate().map(|(i, v)| ((i + 1) as f64, *v)).collect(),
        })
        .collect();
    line_chart("CMC", "rank", "matching rate", &series, Some((0.0, 1.0)))
}

fn distance_plot(reports: &[(&str, &EvalReport)]) -> String {
    let groups: Vec<(&str, Vec<f64>)> = reports
        .iter()
        .map(|(label, r)| (*label, vec![r.intra_mean, r.inter_mean]))
        .collect();
    bar_chart("Mean feature distance", "distance x 1e3", &["intra-class", "inter-class"], &groups)
}

pub fn cmd_eval(cfg: &ExperimentConfig, baseline: bool, mb: &mut ManifestBuilder) -> CliResult<EvalReport> {
    let layout = Layout::new(cfg);
    let pipeline = load_pipeline(cfg, &layout, mb)?;
    let split = load_split(cfg, mb)?;
    mb.arg("baseline", baseline);
    let options = cfg.eval_options();
    let report = evaluate(&split, &pipeline, &options)?;
    let dir = layout.eval_dir();
    let mut outputs = vec![dir.join("report.json"), dir.join("report.txt")];
    write_json(&outputs[0], &report)?;
    write_text(&outputs[1], &report.table())?;
    let mut reports = vec![("fused", &report)];
    let base;
    if baseline {
        base = evaluate(&split, &pipeline.f_r2, &options)?;
        let json = dir.join("baseline.json");
        let txt = dir.join("baseline.txt");
        write_json(&json, &base)?;
        write_text(&txt, &base.table())?;
        outputs.extend([json, txt]);
        reports.push(("F_R2 baseline", &base));
    }
    let cmc = dir.join("cmc.svg");
    let dist = dir.join("distances.svg");
    write_text(&cmc, &cmc_plot(&reports))?;
    write_text(&dist, &distance_plot(&reports))?;
    outputs.extend([cmc, dist]);
    for p in &outputs {
        mb.output(p)?;
    }
    print!("{}", report.table());
    Ok(report)
}

/// One cell of the ablation grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub method: ClusterMethod,
    pub mode: ClusterMode,
    #[serde(rename = "K")]
    pub k: usize,
    pub rank1: Option<f64>,
    #[serde(rename = "mAP")]
    pub map: Option<f64>,
}

pub const ABLATION_K: [usize; 4] = [8, 12, 16, 24];
pub const ABLATION_MODES: [ClusterMode; 2] = [ClusterMode::FullBody, ClusterMode::BodyJoint];
pub const ABLATION_METHODS: [ClusterMethod; 2] = [ClusterMethod::Kmeans, ClusterMethod::Gmm];

fn ablation_cell(
    cfg: &ExperimentConfig,
    dir: &Path,
    split: &DatasetSplit,
    f_r1: &FeatureExtractor,
    f_r2: &FeatureExtractor,
    generator: &Generator,
) -> CliResult<EvalReport> {
    let pose_set = fit_pose_set(cfg, split)?;
    let (net, history) = train_fusion_net(cfg, f_r1, f_r2, generator, &pose_set, &split.train)?;
    let pipeline = ReidPipeline {
        f_r1: f_r1.clone(),
        f_r2: f_r2.clone(),
        generator: generator.clone(),
        pose_set,
        fusion: net,
        source: cfg.fusion.source,
    };
    let report = evaluate(split, &pipeline, &cfg.eval_options())?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    pipeline.pose_set.save(&dir.join("pose_set.json"))?;
    write_json(&dir.join("fusion_history.json"), &history)?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

pub fn cmd_ablate(cfg: &ExperimentConfig, mb: &mut ManifestBuilder) -> CliResult<Vec<AblationRow>> {
    let layout = Layout::new(cfg);
    let f_r1 = load_f_r1(&layout, mb)?;
    let generator = load_generator(&layout, mb)?;
    let split = load_split(cfg, mb)?;
    let f_r2 = if layout.f_r2().exists() {
        load_f_r2(&layout, mb)?
    } else {
        finetune_f_r2(cfg, &layout, &f_r1, &split, mb)?
    };
    let root = layout.ablation_dir();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for mode in ABLATION_MODES {
        for method in ABLATION_METHODS {
            for k in ABLATION_K {
                let mut cell_cfg = cfg.clone();
                cell_cfg.cluster.mode = mode;
                cell_cfg.cluster.method = method;
                cell_cfg.cluster.num_poses = k;
                let name = format!("{mode}-{method}-k{k}");
                let dir = root.join(&name);
                let (rank1, map) = match ablation_cell(&cell_cfg, &dir, &split, &f_r1, &f_r2, &generator) {
                    Ok(r) => {
                        log::info!("{name}: rank-1 {:.4}, mAP {:.4}", r.rank1, r.map);
                        (Some(r.rank1), Some(r.map))
                    }
                    Err(e) => {
                        log::error!("{name} failed: {e}");
                        failed.push(name);
                        (None, None)
                    }
                };
                rows.push(AblationRow {
                    method,
                    mode,
                    k,
                    rank1,
                    map,
                });
            }
        }
    }
    let csv_path = root.join("ablation.csv");
    create_parent(&csv_path)?;
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::Failed(e.to_string()))?;
    for row in &rows {
        w.serialize(row).map_err(|e| CliError::Failed(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    drop(w);
    mb.output(&root)?;
    if !failed.is_empty() {
        return Err(CliError::Failed(format!("ablation cells failed: {}", failed.join(", "))));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_places_source_skeletons_and_renders() {
        let src = Image::filled(4, 2, [1.0, 0.0, 0.0]);
        let sk = vec![Image::filled(4, 2, [0.0, 1.0, 0.0]); 3];
        let gen = vec![Image::filled(4, 2, [0.0, 0.0, 1.0]); 3];
        let grid = image_grid(&src, &sk, &gen);
        assert_eq!(grid.shape(), (10, 4 * 2 + 3 * GRID_GAP));
        assert_eq!(grid.pixel(0, 0), [1.0; 3]);
        assert_eq!(grid.pixel(6, 0), [1.0, 0.0, 0.0]);
        assert_eq!(grid.pixel(0, 4), [0.0, 1.0, 0.0]);
        assert_eq!(grid.pixel(9, 13), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn ablation_grid_has_sixteen_cells() {
        assert_eq!(ABLATION_MODES.len() * ABLATION_METHODS.len() * ABLATION_K.len(), 16);
    }
}
