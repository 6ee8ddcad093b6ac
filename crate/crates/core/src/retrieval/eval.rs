use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    cmc, distance_study, mean_average_precision, pool_descriptors, rank_all, rerank, GalleryIndex, Metric,
    Pooling, Probe, RerankParams,
};
use crate::dataset::{DatasetSplit, Protocol, Sample};
use crate::error::Result;
use crate::fusion::Describer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub metric: Metric,
    pub protocol: Protocol,
    pub rerank: Option<RerankParams>,
    /// Pool all query images sharing identity and camera into one probe.
    pub multi_query: bool,
    pub pooling: Pooling,
    pub max_rank: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            metric: Metric::Euclidean,
            protocol: Protocol::Market1501,
            rerank: None,
            multi_query: false,
            pooling: Pooling::Mean,
            max_rank: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cmc: Vec<f64>,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub map: f64,
    pub per_query_ap: Vec<f64>,
    pub intra_mean: f64,
    pub inter_mean: f64,
    pub num_queries: usize,
    pub num_gallery: usize,
    pub excluded_queries: usize,
    pub metric: Metric,
    pub multi_query: bool,
    pub reranked: bool,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let mode = if self.multi_query { "multi query" } else { "single query" };
        let _ = writeln!(
            s,
            "{mode}, {} metric{}",
            self.metric,
            if self.reranked { ", re-ranked" } else { "" }
        );
        let _ = writeln!(s, "queries  {:>8}  (excluded {})", self.num_queries, self.excluded_queries);
        let _ = writeln!(s, "gallery  {:>8}", self.num_gallery);
        let _ = writeln!(s, "rank-1   {:>8.2}%", 100.0 * self.rank1);
        let _ = writeln!(s, "rank-5   {:>8.2}%", 100.0 * self.rank5);
        let _ = writeln!(s, "rank-10  {:>8.2}%", 100.0 * self.rank10);
        let _ = writeln!(s, "mAP      {:>8.2}%", 100.0 * self.map);
        let _ = writeln!(s, "intra    {:>8.3}  (x1e3)", self.intra_mean);
        let _ = writeln!(s, "inter    {:>8.3}  (x1e3)", self.inter_mean);
        s
    }
}

fn at_rank(curve: &[f64], k: usize) -> f64 {
    curve[k.min(curve.len()) - 1]
}

/// Scores precomputed query and gallery descriptors.
pub fn evaluate_descriptors(
    query: &[Vec<f32>],
    query_labels: &[(u32, Option<u32>)],
    gallery: Vec<Vec<f32>>,
    gallery_labels: &[(u32, Option<u32>)],
    options: &EvalOptions,
) -> Result<EvalReport> {
    let index = GalleryIndex::build(
        gallery,
        gallery_labels.iter().map(|l| l.0).collect(),
        gallery_labels.iter().map(|l| l.1).collect(),
        options.metric,
    )?;
    if query.len() != query_labels.len() {
        return Err(crate::Error::shape(query.len(), query_labels.len()));
    }

    let probes: Vec<Probe> = if options.multi_query {
        let mut groups: BTreeMap<(u32, Option<u32>), Vec<usize>> = BTreeMap::new();
        let mut order = Vec::new();
        for (i, &label) in query_labels.iter().enumerate() {
            let g = groups.entry(label).or_default();
            if g.is_empty() {
                order.push(label);
            }
            g.push(i);
        }
        order
            .into_iter()
            .map(|label| {
                let descs: Vec<&[f32]> = groups[&label].iter().map(|&i| query[i].as_slice()).collect();
                Ok(Probe {
                    descriptor: pool_descriptors(&descs, options.pooling)?,
                    identity: label.0,
                    camera: label.1,
                })
            })
            .collect::<Result<_>>()?
    } else {
        query
            .iter()
            .zip(query_labels)
            .map(|(d, &(identity, camera))| Probe {
                descriptor: d.clone(),
                identity,
                camera,
            })
            .collect()
    };

    let mut results = rank_all(&index, &probes, options.protocol)?;
    if let Some(params) = &options.rerank {
        let descs: Vec<Vec<f32>> = probes.iter().map(|p| p.descriptor.clone()).collect();
        results = rerank(&index, &descs, &results, params)?;
    }
    let curve = cmc(&results, options.max_rank)?;
    let map = mean_average_precision(&results)?;
    let study = distance_study(index.descriptors(), index.identities(), options.metric)?;
    Ok(EvalReport {
        rank1: at_rank(&curve.curve, 1),
        rank5: at_rank(&curve.curve, 5),
        rank10: at_rank(&curve.curve, 10),
        cmc: curve.curve,
        map: map.map,
        per_query_ap: map.per_query_ap,
        intra_mean: study.intra_mean,
        inter_mean: study.inter_mean,
        num_queries: results.len(),
        num_gallery: index.len(),
        excluded_queries: curve.excluded,
        metric: options.metric,
        multi_query: options.multi_query,
        reranked: options.rerank.is_some(),
    })
}

const CHUNK: usize = 64;

pub fn describe_samples(describer: &dyn Describer, samples: &[Sample]) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(CHUNK) {
        let imgs: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        out.extend(describer.describe(&imgs)?);
    }
    Ok(out)
}

fn labels(samples: &[Sample]) -> Vec<(u32, Option<u32>)> {
    samples.iter().map(|s| (s.identity(), s.camera())).collect()
}

/// Describes the query and gallery images of `split` and scores retrieval.
pub fn evaluate(split: &DatasetSplit, describer: &dyn Describer, options: &EvalOptions) -> Result<EvalReport> {
    let query = describe_samples(describer, &split.query)?;
    let gallery = describe_samples(describer, &split.gallery)?;
    evaluate_descriptors(&query, &labels(&split.query), gallery, &labels(&split.gallery), options)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[(u32, u32)]) -> Vec<(u32, Option<u32>)> {
        v.iter().map(|&(i, c)| (i, Some(c))).collect()
    }

    #[test]
    fn report_satisfies_invariants() {
        let gallery = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![5.0, 5.0], vec![5.1, 5.0]];
        let g = labels(&[(1, 1), (1, 1), (2, 1), (2, 1)]);
        let query = vec![vec![0.05, 0.0], vec![5.0, 5.1], vec![4.0, 4.0]];
        let q = labels(&[(1, 0), (2, 0), (2, 0)]);
        let r = evaluate_descriptors(&query, &q, gallery.clone(), &g, &EvalOptions::default()).unwrap();
        assert_eq!(r.rank1, 1.0);
        assert_eq!(r.map, 1.0);
        assert!(r.cmc.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(r.num_queries, 3);
        assert!(r.intra_mean < r.inter_mean);

        let opts = EvalOptions {
            multi_query: true,
            ..EvalOptions::default()
        };
        let m = evaluate_descriptors(&query, &q, gallery.clone(), &g, &opts).unwrap();
        assert_eq!(m.num_queries, 2);

        let opts = EvalOptions {
            rerank: Some(RerankParams {
                k1: 2,
                k2: 1,
                lambda: 0.3,
            }),
            ..EvalOptions::default()
        };
        let rr = evaluate_descriptors(&query, &q, gallery, &g, &opts).unwrap();
        assert!(rr.reranked);
        assert!((0.0..=1.0).contains(&rr.map));
        let json = serde_json::to_value(&rr).unwrap();
        for key in ["cmc", "rank1", "rank5", "rank10", "map", "per_query_ap", "intra_mean", "inter_mean"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert!(rr.table().contains("rank-1"));
    }
}
