use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Metric, RetrievalResult};
use crate::error::{Error, Result};

/// Scale applied to the distance-study means.
pub const DISTANCE_SCALE: f64 = 1e3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cmc {
    /// `curve[k - 1]` is the rank-k accuracy.
    pub curve: Vec<f64>,
    /// Queries without any valid relevant entry.
    pub excluded: usize,
}

pub fn cmc(results: &[RetrievalResult], max_rank: usize) -> Result<Cmc> {
    if max_rank == 0 {
        return Err(Error::InvalidInput("max_rank must be at least 1".into()));
    }
    let mut hits = vec![0usize; max_rank];
    let mut scored = 0;
    for r in results {
        let Some(first) = r.first_hit() else { continue };
        scored += 1;
        if first <= max_rank {
            hits[first - 1] += 1;
        }
    }
    let excluded = results.len() - scored;
    if excluded > 0 {
        log::warn!("{excluded} queries have no valid relevant gallery entry and are excluded");
    }
    if scored == 0 {
        return Err(Error::InsufficientData("no query has a relevant gallery entry".into()));
    }
    let mut acc = 0;
    let curve = hits
        .iter()
        .map(|&h| {
            acc += h;
            acc as f64 / scored as f64
        })
        .collect();
    Ok(Cmc { curve, excluded })
}

/// Mean of precision-at-k over the ranks `k` of relevant entries.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in relevant.iter().enumerate() {
        if rel {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    (found > 0).then(|| sum / found as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanAp {
    pub map: f64,
    pub per_query_ap: Vec<f64>,
    /// `query_ref` of each entry of `per_query_ap`.
    pub query_refs: Vec<usize>,
    pub excluded: usize,
}

pub fn mean_average_precision(results: &[RetrievalResult]) -> Result<MeanAp> {
    let mut per_query_ap = Vec::new();
    let mut query_refs = Vec::new();
    for r in results {
        if let Some(ap) = average_precision(&r.relevant) {
            per_query_ap.push(ap);
            query_refs.push(r.query_ref);
        }
    }
    if per_query_ap.is_empty() {
        return Err(Error::InsufficientData("no query has a relevant gallery entry".into()));
    }
    let map = per_query_ap.iter().sum::<f64>() / per_query_ap.len() as f64;
    Ok(MeanAp {
        map,
        excluded: results.len() - per_query_ap.len(),
        per_query_ap,
        query_refs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceStudy {
    /// Mean same-identity pairwise distance, scaled by 10^3.
    pub intra_mean: f64,
    /// Mean different-identity pairwise distance, scaled by 10^3.
    pub inter_mean: f64,
    pub intra_pairs: usize,
    pub inter_pairs: usize,
}

pub fn distance_study(descriptors: &[Vec<f32>], labels: &[u32], metric: Metric) -> Result<DistanceStudy> {
    if descriptors.len() != labels.len() {
        return Err(Error::shape(descriptors.len(), labels.len()));
    }
    if labels.iter().collect::<BTreeSet<_>>().len() < 2 {
        return Err(Error::InsufficientData("distance study needs at least two identities".into()));
    }
    let (mut intra, mut inter) = (0.0, 0.0);
    let (mut n_intra, mut n_inter) = (0usize, 0usize);
    for i in 0..descriptors.len() {
        for j in i + 1..descriptors.len() {
            let d = metric.distance(&descriptors[i], &descriptors[j]);
            if labels[i] == labels[j] {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 {
        return Err(Error::InsufficientData("every identity has a single descriptor".into()));
    }
    Ok(DistanceStudy {
        intra_mean: DISTANCE_SCALE * intra / n_intra as f64,
        inter_mean: DISTANCE_SCALE * inter / n_inter as f64,
        intra_pairs: n_intra,
        inter_pairs: n_inter,
    })
}
