//! Gallery indexing, ranking, CMC/mAP scoring, k-reciprocal re-ranking and
//! the intra/inter-class distance study.

mod eval;
mod io;
mod metrics;
mod rerank;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::eval::{describe_samples, evaluate, evaluate_descriptors, EvalOptions, EvalReport};
pub use self::io::{read_descriptor_file, sidecar_path, write_descriptor_file, DescriptorFile, DescriptorMeta};
pub use self::metrics::{average_precision, cmc, distance_study, mean_average_precision, Cmc, DistanceStudy, MeanAp};
pub use self::rerank::{rerank, RerankParams};
use crate::dataset::Protocol;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`.
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = f64::from(x) - f64::from(y);
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (&x, &y) in a.iter().zip(b) {
                    let (x, y) = (f64::from(x), f64::from(y));
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                let denom = (na * nb).sqrt();
                if denom == 0.0 {
                    1.0
                } else {
                    1.0 - dot / denom
                }
            }
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Metric::Euclidean => 0,
            Metric::Cosine => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Metric::Euclidean),
            1 => Ok(Metric::Cosine),
            other => Err(Error::InvalidInput(format!("unknown metric code {other}"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

/// How several query descriptors of one person become a single probe.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

/// An immutable gallery: `M` descriptors with identity and camera labels.
#[derive(Clone, Debug)]
pub struct GalleryIndex {
    descriptors: Vec<Vec<f32>>,
    identities: Vec<u32>,
    cameras: Vec<Option<u32>>,
    metric: Metric,
    dim: usize,
}

impl GalleryIndex {
    pub fn build(
        descriptors: Vec<Vec<f32>>,
        identities: Vec<u32>,
        cameras: Vec<Option<u32>>,
        metric: Metric,
    ) -> Result<Self> {
        if descriptors.is_empty() {
            return Err(Error::InvalidInput("gallery is empty".into()));
        }
        if identities.len() != descriptors.len() {
            return Err(Error::shape(descriptors.len(), identities.len()));
        }
        if cameras.len() != descriptors.len() {
            return Err(Error::shape(descriptors.len(), cameras.len()));
        }
        let dim = descriptors[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("descriptors have zero length".into()));
        }
        for (i, d) in descriptors.iter().enumerate() {
            if d.len() != dim {
                return Err(Error::shape(dim, d.len()));
            }
            if d.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("gallery descriptor {i} is not finite")));
            }
        }
        Ok(Self {
            descriptors,
            identities,
            cameras,
            metric,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn descriptors(&self) -> &[Vec<f32>] {
        &self.descriptors
    }

    pub fn identities(&self) -> &[u32] {
        &self.identities
    }

    pub fn cameras(&self) -> &[Option<u32>] {
        &self.cameras
    }

    pub fn distances(&self, query: &[f32]) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            return Err(Error::shape(self.dim, query.len()));
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("query descriptor is not finite".into()));
        }
        Ok(self
            .descriptors
            .iter()
            .map(|g| self.metric.distance(query, g))
            .collect())
    }

    /// Entries a query of `identity` seen by `camera` may be matched against.
    pub fn valid_mask(&self, identity: u32, camera: Option<u32>, protocol: Protocol) -> Vec<bool> {
        self.identities
            .iter()
            .zip(&self.cameras)
            .map(|(&gid, &gcam)| {
                if protocol == Protocol::Cuhk01 {
                    return true;
                }
                !(gid == identity && camera.is_some() && gcam == camera)
            })
            .collect()
    }
}

/// A ranked gallery for one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_ref: usize,
    pub query_identity: u32,
    /// Valid gallery indices, nearest first.
    pub ranked_indices: Vec<usize>,
    /// Distances aligned with `ranked_indices`.
    pub distances: Vec<f64>,
    /// Length `M`; false for protocol-filtered entries.
    pub valid_mask: Vec<bool>,
    /// Aligned with `ranked_indices`: does the entry share the query identity.
    pub relevant: Vec<bool>,
}

impl RetrievalResult {
    /// Sorts the valid entries of `all_distances` (length `M`).
    pub fn from_distances(
        query_ref: usize,
        query_identity: u32,
        all_distances: &[f64],
        valid_mask: Vec<bool>,
        gallery_identities: &[u32],
    ) -> Self {
        let mut order: Vec<usize> = (0..all_distances.len()).filter(|&j| valid_mask[j]).collect();
        order.sort_by(|&a, &b| all_distances[a].total_cmp(&all_distances[b]).then(a.cmp(&b)));
        Self {
            query_ref,
            query_identity,
            distances: order.iter().map(|&j| all_distances[j]).collect(),
            relevant: order.iter().map(|&j| gallery_identities[j] == query_identity).collect(),
            ranked_indices: order,
            valid_mask,
        }
    }

    /// 1-based rank of the first relevant entry.
    pub fn first_hit(&self) -> Option<usize> {
        self.relevant.iter().position(|&r| r).map(|p| p + 1)
    }
}

pub fn rank(
    index: &GalleryIndex,
    query_ref: usize,
    query: &[f32],
    identity: u32,
    camera: Option<u32>,
    protocol: Protocol,
) -> Result<RetrievalResult> {
    let dist = index.distances(query)?;
    let mask = index.valid_mask(identity, camera, protocol);
    Ok(RetrievalResult::from_distances(query_ref, identity, &dist, mask, &index.identities))
}

/// Element-wise pooling of several descriptors into one probe.
pub fn pool_descriptors(descs: &[&[f32]], pooling: Pooling) -> Result<Vec<f32>> {
    let first = descs
        .first()
        .ok_or_else(|| Error::InvalidInput("multi-query needs at least one descriptor".into()))?;
    let d = first.len();
    if descs.iter().any(|q| q.len() != d) {
        return Err(Error::InvalidInput("query descriptors differ in length".into()));
    }
    Ok((0..d)
        .map(|k| match pooling {
            Pooling::Mean => {
                (descs.iter().map(|q| f64::from(q[k])).sum::<f64>() / descs.len() as f64) as f32
            }
            Pooling::Max => descs.iter().map(|q| q[k]).fold(f32::NEG_INFINITY, f32::max),
        })
        .collect())
}

pub fn multi_query_rank(
    index: &GalleryIndex,
    query_ref: usize,
    queries: &[&[f32]],
    identity: u32,
    camera: Option<u32>,
    protocol: Protocol,
    pooling: Pooling,
) -> Result<RetrievalResult> {
    let probe = pool_descriptors(queries, pooling)?;
    rank(index, query_ref, &probe, identity, camera, protocol)
}

/// One probe to rank: descriptor plus labels.
#[derive(Clone, Debug)]
pub struct Probe {
    pub descriptor: Vec<f32>,
    pub identity: u32,
    pub camera: Option<u32>,
}

/// Ranks every probe against the gallery; `query_ref` is the probe index.
pub fn rank_all(index: &GalleryIndex, probes: &[Probe], protocol: Protocol) -> Result<Vec<RetrievalResult>> {
    probes
        .par_iter()
        .enumerate()
        .map(|(i, p)| rank(index, i, &p.descriptor, p.identity, p.camera, protocol))
        .collect()
}
