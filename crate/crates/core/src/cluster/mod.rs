//! Canonical pose derivation.
//!
//! Training poses are clustered either as whole 50-dimensional vectors
//! ([`ClusterMode::FullBody`]) or joint by joint ([`ClusterMode::BodyJoint`]),
//! with K-means or a diagonal Gaussian mixture. The result is a [`PoseSet`]
//! of fully present poses.

mod gmm;
mod kmeans;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use self::gmm::{gmm_fit, gmm_sample, GmmFit, GmmModel, VARIANCE_FLOOR};
pub use self::kmeans::{kmeans_fit, KMeansFit};
use crate::dataset::{Joint, PoseSource, PoseVector, NUM_JOINTS, POSE_FEATURE_DIM};
use crate::error::{Error, Result};

/// Iteration controls shared by the K-means and EM fitters.
#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub n_init: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-6,
            seed: 0,
            n_init: 4,
        }
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    Kmeans,
    Gmm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMode {
    #[serde(alias = "full-body", alias = "pose")]
    FullBody,
    #[serde(alias = "body-joint", alias = "joint")]
    BodyJoint,
}

impl std::fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClusterMethod::Kmeans => "kmeans",
            ClusterMethod::Gmm => "gmm",
        })
    }
}

impl std::fmt::Display for ClusterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClusterMode::FullBody => "fullbody",
            ClusterMode::BodyJoint => "bodyjoint",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub method: ClusterMethod,
    pub mode: ClusterMode,
    /// Number of output poses.
    pub num_poses: usize,
    /// Clusters per joint in body-joint mode.
    pub n_cbj: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub min_present_frac: f64,
    /// K-means restarts; the lowest inertia wins.
    pub n_init: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            method: ClusterMethod::Gmm,
            mode: ClusterMode::FullBody,
            num_poses: 12,
            n_cbj: 3,
            max_iter: 300,
            tol: 1e-6,
            seed: 0,
            min_present_frac: 0.7,
            n_init: 4,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_poses == 0 {
            return Err(Error::Config("num_poses must be positive".into()));
        }
        if self.n_cbj == 0 {
            return Err(Error::Config("n_cbj must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_present_frac) {
            return Err(Error::Config("min_present_frac must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.seed,
            n_init: self.n_init,
        }
    }
}

/// The canonical poses together with the configuration that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSet {
    pub poses: Vec<PoseVector>,
    pub provenance: ClusterConfig,
}

impl PoseSet {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.poses.len() != self.provenance.num_poses {
            return Err(Error::shape(self.provenance.num_poses, self.poses.len()));
        }
        for p in &self.poses {
            p.validate()?;
            if p.present_count() != NUM_JOINTS {
                return Err(Error::PoseFormat("canonical poses must be complete".into()));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: PoseSet = serde_json::from_str(&text)?;
        set.validate()?;
        Ok(set)
    }
}

/// Mean location of every joint over the poses in which it was detected.
#[derive(Clone, Debug, PartialEq)]
pub struct JointMeans(pub [(f64, f64); NUM_JOINTS]);

impl JointMeans {
    /// Joints never detected fall back to the frame centre.
    pub fn from_poses<'a>(poses: impl IntoIterator<Item = &'a PoseVector>) -> Self {
        let mut sums = [(0.0, 0.0, 0usize); NUM_JOINTS];
        for p in poses {
            for (s, j) in sums.iter_mut().zip(&p.joints) {
                if j.is_present() {
                    s.0 += j.x;
                    s.1 += j.y;
                    s.2 += 1;
                }
            }
        }
        let mut means = [(0.5, 0.5); NUM_JOINTS];
        for (m, s) in means.iter_mut().zip(&sums) {
            if s.2 > 0 {
                *m = (s.0 / s.2 as f64, s.1 / s.2 as f64);
            }
        }
        JointMeans(means)
    }
}

/// Flattens a pose to `[x0, y0, x1, y1, ...]`. Missing joints take the value
/// from `means`, or the origin when no table is given.
pub fn pose_to_feature(pose: &PoseVector, means: Option<&JointMeans>) -> Vec<f64> {
    let mut out = Vec::with_capacity(POSE_FEATURE_DIM);
    for (j, joint) in pose.joints.iter().enumerate() {
        if joint.is_present() {
            out.extend([joint.x, joint.y]);
        } else {
            let (x, y) = means.map_or((0.0, 0.0), |m| m.0[j]);
            out.extend([x, y]);
        }
    }
    out
}

/// Generator conditioning vector for a pose.
pub fn encode_pose(pose: &PoseVector) -> Vec<f32> {
    pose_to_feature(pose, None).into_iter().map(|v| v as f32).collect()
}

fn clamp_pose(feature: &[f64]) -> Result<PoseVector> {
    let clamped: Vec<f64> = feature.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    PoseVector::from_feature(&clamped, PoseSource::Clustered)
}

/// Derives `cfg.num_poses` canonical poses from detected training poses.
pub fn derive_pose_set(poses: &[PoseVector], cfg: &ClusterConfig) -> Result<PoseSet> {
    cfg.validate()?;
    let kept: Vec<&PoseVector> = poses
        .iter()
        .filter(|p| p.present_fraction() >= cfg.min_present_frac && p.present_count() > 0)
        .collect();
    let needed = cfg.num_poses.max(cfg.n_cbj);
    if kept.len() < needed {
        return Err(Error::InsufficientData(format!(
            "{} usable poses (of {}), at least {needed} required",
            kept.len(),
            poses.len()
        )));
    }
    let means = JointMeans::from_poses(kept.iter().copied());
    let features: Vec<Vec<f64>> = kept.iter().map(|p| pose_to_feature(p, Some(&means))).collect();
    let opts = cfg.fit_options();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let out = match cfg.mode {
        ClusterMode::FullBody => match cfg.method {
            ClusterMethod::Kmeans => {
                let fit = kmeans_fit(&features, cfg.num_poses, &opts)?;
                fit.centers.iter().map(|c| clamp_pose(c)).collect::<Result<Vec<_>>>()?
            }
            ClusterMethod::Gmm => {
                let fit = gmm_fit(&features, cfg.num_poses, &opts)?;
                gmm::gmm_sample_with(&fit.model, cfg.num_poses, &mut rng)
                    .iter()
                    .map(|c| clamp_pose(c))
                    .collect::<Result<Vec<_>>>()?
            }
        },
        ClusterMode::BodyJoint => {
            let mut columns = Vec::with_capacity(NUM_JOINTS);
            for j in 0..NUM_JOINTS {
                let pts: Vec<Vec<f64>> =
                    features.iter().map(|f| vec![f[2 * j], f[2 * j + 1]]).collect();
                let joint_opts = FitOptions {
                    seed: cfg.seed.wrapping_add(1 + j as u64),
                    ..opts.clone()
                };
                let choices = match cfg.method {
                    ClusterMethod::Kmeans => {
                        let centers = kmeans_fit(&pts, cfg.n_cbj, &joint_opts)?.centers;
                        (0..cfg.num_poses)
                            .map(|_| centers[rng.random_range(0..centers.len())].clone())
                            .collect::<Vec<_>>()
                    }
                    ClusterMethod::Gmm => {
                        let model = gmm_fit(&pts, cfg.n_cbj, &joint_opts)?.model;
                        gmm::gmm_sample_with(&model, cfg.num_poses, &mut rng)
                    }
                };
                columns.push(choices);
            }
            (0..cfg.num_poses)
                .map(|k| {
                    let mut pose = PoseVector::missing(PoseSource::Clustered);
                    for (joint, col) in pose.joints.iter_mut().zip(&columns) {
                        *joint = Joint::present(col[k][0].clamp(0.0, 1.0), col[k][1].clamp(0.0, 1.0));
                    }
                    pose
                })
                .collect()
        }
    };
    Ok(PoseSet {
        poses: out,
        provenance: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_toy_dataset, ToySpec};

    fn toy_poses() -> Vec<PoseVector> {
        synth_toy_dataset(&ToySpec::default()).unwrap().1
    }

    #[test]
    fn feature_is_exact_concatenation() {
        let poses = toy_poses();
        let f = pose_to_feature(&poses[0], None);
        assert_eq!(f.len(), POSE_FEATURE_DIM);
        for j in 0..NUM_JOINTS {
            assert_eq!(f[2 * j], poses[0].joints[j].x);
            assert_eq!(f[2 * j + 1], poses[0].joints[j].y);
        }
    }

    #[test]
    fn missing_joint_is_mean_imputed() {
        let mut p = toy_poses()[0].clone();
        p.joints[7] = Joint::MISSING;
        let mut means = JointMeans([(0.0, 0.0); NUM_JOINTS]);
        means.0[7] = (0.4, 0.6);
        let f = pose_to_feature(&p, Some(&means));
        assert_eq!((f[14], f[15]), (0.4, 0.6));
    }

    #[test]
    fn sparse_poses_are_filtered() {
        let mut poses = vec![PoseVector::missing(PoseSource::Detected); 20];
        poses.extend(toy_poses().into_iter().take(3));
        let cfg = ClusterConfig {
            num_poses: 8,
            ..ClusterConfig::default()
        };
        assert!(matches!(derive_pose_set(&poses, &cfg), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn fullbody_kmeans_returns_centers() {
        let poses = toy_poses();
        let cfg = ClusterConfig {
            method: ClusterMethod::Kmeans,
            num_poses: 8,
            ..ClusterConfig::default()
        };
        let set = derive_pose_set(&poses, &cfg).unwrap();
        set.validate().unwrap();
        assert_eq!(set.len(), 8);
        let feats: Vec<Vec<f64>> = poses.iter().map(|p| pose_to_feature(p, None)).collect();
        let fit = kmeans_fit(&feats, 8, &cfg.fit_options()).unwrap();
        for (p, c) in set.poses.iter().zip(&fit.centers) {
            assert_eq!(pose_to_feature(p, None), *c);
        }
    }

    #[test]
    fn fullbody_gmm_is_deterministic() {
        let poses = toy_poses();
        let cfg = ClusterConfig::default();
        let a = derive_pose_set(&poses, &cfg).unwrap();
        let b = derive_pose_set(&poses, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        a.validate().unwrap();
    }

    #[test]
    fn bodyjoint_kmeans_picks_joint_centers() {
        let poses = toy_poses();
        let cfg = ClusterConfig {
            method: ClusterMethod::Kmeans,
            mode: ClusterMode::BodyJoint,
            num_poses: 16,
            ..ClusterConfig::default()
        };
        let set = derive_pose_set(&poses, &cfg).unwrap();
        set.validate().unwrap();
        for j in 0..NUM_JOINTS {
            let pts: Vec<Vec<f64>> = poses
                .iter()
                .map(|p| vec![p.joints[j].x, p.joints[j].y])
                .collect();
            let opts = FitOptions {
                seed: cfg.seed + 1 + j as u64,
                ..cfg.fit_options()
            };
            let centers = kmeans_fit(&pts, 3, &opts).unwrap().centers;
            for p in &set.poses {
                let xy = vec![p.joints[j].x, p.joints[j].y];
                assert!(centers.contains(&xy), "joint {j}: {xy:?} not in {centers:?}");
            }
        }
    }

    #[test]
    fn bodyjoint_gmm_completes() {
        let cfg = ClusterConfig {
            mode: ClusterMode::BodyJoint,
            num_poses: 24,
            ..ClusterConfig::default()
        };
        let set = derive_pose_set(&toy_poses(), &cfg).unwrap();
        set.validate().unwrap();
        assert_eq!(set.len(), 24);
    }

    #[test]
    fn pose_set_json_round_trip() {
        let set = derive_pose_set(&toy_poses(), &ClusterConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.json");
        set.save(&path).unwrap();
        assert_eq!(PoseSet::load(&path).unwrap(), set);
    }

    #[test]
    fn config_validation() {
        let bad = ClusterConfig {
            n_cbj: 0,
            ..ClusterConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ClusterConfig {
            tol: 0.0,
            ..ClusterConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
