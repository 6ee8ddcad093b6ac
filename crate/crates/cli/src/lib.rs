//! The `posefuse` command line: one subcommand per pipeline stage, each
//! recording a [`manifest::RunManifest`] that can replay it.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{load_config, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{read_manifest, ManifestBuilder};

#[derive(Debug, Parser)]
#[command(name = "posefuse", version, about = "Pose-transfer person re-identification pipeline")]
pub struct Cli {
    /// TOML configuration layered over the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set cluster.num_poses=8`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true, env = "POSEFUSE_OUTPUT_DIR")]
    pub output_dir: Option<PathBuf>,
    /// Global seed; every stage seed derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. Use 1 for bit-reproducible runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Re-run the command recorded in this run manifest. Only
    /// `--output-dir` and `--threads` still apply.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Subcommand)]
pub enum Command {
    /// Write the synthetic toy dataset.
    Synth,
    /// Cluster training poses into the canonical pose set.
    Cluster {
        /// kmeans or gmm
        #[arg(long)]
        method: Option<String>,
        /// fullbody or bodyjoint
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        num_poses: Option<usize>,
    },
    /// Build F_R1 and train the pose-transfer GAN.
    TrainGan,
    /// Render one image in every canonical pose.
    Generate {
        /// Source image; defaults to the first query image.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finetune F_R2 and train the fusion network.
    TrainFusion,
    /// Describe the query and gallery sets.
    Index {
        /// Use F_R2 descriptors instead of fused ones.
        #[arg(long)]
        baseline: bool,
    },
    /// Score the fused pipeline on the test split.
    Eval {
        /// Also score the F_R2-only baseline.
        #[arg(long)]
        baseline: bool,
    },
    /// Run the clustering ablation grid.
    Ablate,
    /// Print the effective configuration.
    ShowConfig,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Cluster { .. } => "cluster",
            Command::TrainGan => "train-gan",
            Command::Generate { .. } => "generate",
            Command::TrainFusion => "train-fusion",
            Command::Index { .. } => "index",
            Command::Eval { .. } => "eval",
            Command::Ablate => "ablate",
            Command::ShowConfig => "show-config",
        }
    }
}

/// A command ready to run.
#[derive(Debug)]
pub struct Invocation {
    pub config: ExperimentConfig,
    pub threads: Option<usize>,
    pub command: Command,
}

fn quoted(s: &str) -> String {
    format!("{s:?}")
}

/// Resolves the configuration, either from the layered sources or from a
/// recorded manifest.
pub fn resolve(cli: &Cli) -> CliResult<Invocation> {
    if let Some(path) = &cli.manifest {
        let m = read_manifest(path)?;
        if m.command != cli.command.name() {
            return Err(CliError::Config(format!(
                "manifest records `{}`, not `{}`",
                m.command,
                cli.command.name()
            )));
        }
        let mut config = m.config.clone();
        if let Some(dir) = &cli.output_dir {
            config.output_dir = dir.clone();
        }
        config.validate()?;
        let flag = |k: &str| m.args.get(k).is_some_and(|v| v == "true");
        let path_arg = |k: &str| m.args.get(k).map(PathBuf::from);
        let command = match &cli.command {
            Command::Generate { .. } => Command::Generate {
                image: path_arg("image"),
                out: path_arg("out"),
            },
            Command::Index { .. } => Command::Index {
                baseline: flag("baseline"),
            },
            Command::Eval { .. } => Command::Eval {
                baseline: flag("baseline"),
            },
            other => other.clone(),
        };
        return Ok(Invocation {
            config,
            threads: cli.threads.or(m.threads),
            command,
        });
    }

    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Command::Cluster { method, mode, num_poses } = &cli.command {
        if let Some(m) = method {
            overrides.push(format!("cluster.method={}", quoted(m)));
        }
        if let Some(m) = mode {
            overrides.push(format!("cluster.mode={}", quoted(m)));
        }
        if let Some(k) = num_poses {
            overrides.push(format!("cluster.num_poses={k}"));
        }
    }
    let config = load_config(cli.config.as_deref(), &overrides, cli.output_dir.as_deref())?;
    Ok(Invocation {
        config,
        threads: cli.threads,
        command: cli.command.clone(),
    })
}

fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // The tensor kernels size their pools from this variable.
        std::env::set_var("RAYON_NUM_THREADS", n.to_string());
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub fn execute(inv: Invocation) -> CliResult<()> {
    use crate::commands::*;

    configure_threads(inv.threads);
    let cfg = &inv.config;
    if inv.command == Command::ShowConfig {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let mut mb = ManifestBuilder::new(inv.command.name(), cfg, inv.threads);
    match &inv.command {
        Command::Synth => cmd_synth(cfg, &mut mb)?,
        Command::Cluster { .. } => cmd_cluster(cfg, &mut mb)?,
        Command::TrainGan => cmd_train_gan(cfg, &mut mb)?,
        Command::Generate { image, out } => {
            let path = cmd_generate(cfg, image.as_deref(), out.as_deref(), &mut mb)?;
            println!("{}", path.display());
        }
        Command::TrainFusion => cmd_train_fusion(cfg, &mut mb)?,
        Command::Index { baseline } => cmd_index(cfg, *baseline, &mut mb)?,
        Command::Eval { baseline } => {
            cmd_eval(cfg, *baseline, &mut mb)?;
        }
        Command::Ablate => {
            cmd_ablate(cfg, &mut mb)?;
        }
        Command::ShowConfig => unreachable!(),
    }
    mb.finish()?;
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    execute(resolve(cli)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("posefuse").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn cluster_flags_become_overrides() {
        let cli = parse(&["cluster", "--method", "kmeans", "--mode", "bodyjoint", "--num-poses", "8", "--seed", "5"]);
        let inv = resolve(&cli).unwrap();
        assert_eq!(inv.config.cluster.method, posefuse_core::ClusterMethod::Kmeans);
        assert_eq!(inv.config.cluster.mode, posefuse_core::ClusterMode::BodyJoint);
        assert_eq!(inv.config.cluster.num_poses, 8);
        assert_eq!(inv.config.seed, 5);
    }

    #[test]
    fn bad_cluster_method_is_a_config_error() {
        let cli = parse(&["cluster", "--method", "dbscan"]);
        assert_eq!(resolve(&cli).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn manifest_replay_restores_config_and_args() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            seed: 42,
            output_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        let mut mb = ManifestBuilder::new("eval", &cfg, Some(1));
        mb.arg("baseline", true);
        mb.finish().unwrap();
        let manifest = dir.path().join("manifests/eval.json");
        let other = dir.path().join("replay");
        let m = manifest.to_str().unwrap();
        let o = other.to_str().unwrap();
        let inv = resolve(&parse(&["eval", "--manifest", m, "--output-dir", o])).unwrap();
        assert_eq!(inv.config.seed, 42);
        assert_eq!(inv.config.output_dir, other);
        assert_eq!(inv.threads, Some(1));
        assert_eq!(inv.command, Command::Eval { baseline: true });
        let err = resolve(&parse(&["index", "--manifest", m])).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
