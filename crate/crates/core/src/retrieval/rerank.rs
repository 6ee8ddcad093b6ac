use serde::{Deserialize, Serialize};

use super::{GalleryIndex, RetrievalResult};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankParams {
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
}

impl Default for RerankParams {
    fn default() -> Self {
        Self {
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

impl RerankParams {
    pub fn validate(&self, gallery_len: usize) -> Result<()> {
        if self.k1 == 0 || self.k1 >= gallery_len {
            return Err(Error::Config(format!(
                "k1 = {} must lie in [1, gallery size = {gallery_len})",
                self.k1
            )));
        }
        if self.k2 == 0 {
            return Err(Error::Config("k2 must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("lambda must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Sparse non-negative vector over point indices, sorted by index.
type Sparse = Vec<(usize, f64)>;

struct Neighbours {
    /// Per point, all points ordered by distance (self first, ties by index).
    order: Vec<Vec<usize>>,
}

impl Neighbours {
    fn new(dist: &[Vec<f64>]) -> Self {
        let order = dist
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut o: Vec<usize> = (0..row.len()).collect();
                o.sort_by(|&a, &b| {
                    row[a]
                        .total_cmp(&row[b])
                        .then((a != i).cmp(&(b != i)))
                        .then(a.cmp(&b))
                });
                o
            })
            .collect();
        Self { order }
    }

    fn forward(&self, i: usize, k: usize) -> &[usize] {
        &self.order[i][..(k + 1).min(self.order[i].len())]
    }

    fn reciprocal(&self, i: usize, k: usize) -> Vec<usize> {
        let mut r: Vec<usize> = self
            .forward(i, k)
            .iter()
            .copied()
            .filter(|&j| self.forward(j, k).contains(&i))
            .collect();
        r.sort_unstable();
        r
    }

    fn expanded(&self, i: usize, k1: usize) -> Vec<usize> {
        let base = self.reciprocal(i, k1);
        let half = ((k1 as f64) / 2.0).round() as usize;
        let mut out = base.clone();
        for &c in &base {
            let cand = self.reciprocal(c, half);
            let overlap = cand.iter().filter(|j| base.binary_search(j).is_ok()).count();
            if overlap as f64 > 2.0 / 3.0 * cand.len() as f64 {
                out.extend(cand);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn jaccard(a: &Sparse, b: &Sparse) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut num, mut den) = (0.0, 0.0);
    while i < a.len() || j < b.len() {
        let ka = a.get(i).map_or(usize::MAX, |e| e.0);
        let kb = b.get(j).map_or(usize::MAX, |e| e.0);
        if ka == kb {
            num += a[i].1.min(b[j].1);
            den += a[i].1.max(b[j].1);
            i += 1;
            j += 1;
        } else if ka < kb {
            den += a[i].1;
            i += 1;
        } else {
            den += b[j].1;
            j += 1;
        }
    }
    if den == 0.0 {
        1.0
    } else {
        1.0 - num / den
    }
}

fn average(vectors: &[&Sparse]) -> Sparse {
    let mut acc: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for v in vectors {
        for &(k, x) in *v {
            *acc.entry(k).or_default() += x;
        }
    }
    let n = vectors.len() as f64;
    acc.into_iter().map(|(k, x)| (k, x / n)).collect()
}

/// k-reciprocal re-ranking. `probes[i]` is the descriptor that produced
/// `results[i]`. Distances become `(1 - lambda) * jaccard + lambda * d / max d`,
/// where the Jaccard distance compares k-reciprocal neighbour encodings over
/// the joint probe + gallery set.
pub fn rerank(
    index: &GalleryIndex,
    probes: &[Vec<f32>],
    results: &[RetrievalResult],
    params: &RerankParams,
) -> Result<Vec<RetrievalResult>> {
    params.validate(index.len())?;
    if probes.len() != results.len() {
        return Err(Error::shape(results.len(), probes.len()));
    }
    let p = probes.len();
    let points: Vec<&[f32]> = probes
        .iter()
        .map(Vec::as_slice)
        .chain(index.descriptors().iter().map(Vec::as_slice))
        .collect();
    for q in probes {
        if q.len() != index.dim() {
            return Err(Error::shape(index.dim(), q.len()));
        }
    }
    let n = points.len();
    let metric = index.metric();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = metric.distance(points[i], points[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let max = dist.iter().flatten().fold(0.0f64, |m, &d| m.max(d));
    if max > 0.0 {
        for row in &mut dist {
            for d in row.iter_mut() {
                *d /= max;
            }
        }
    }

    let nb = Neighbours::new(&dist);
    let encodings: Vec<Sparse> = (0..n)
        .map(|i| {
            let set = nb.expanded(i, params.k1);
            let w: Vec<f64> = set.iter().map(|&j| (-dist[i][j]).exp()).collect();
            let total: f64 = w.iter().sum();
            set.into_iter().zip(w).map(|(j, x)| (j, x / total)).collect()
        })
        .collect();
    let encodings: Vec<Sparse> = if params.k2 > 1 {
        (0..n)
            .map(|i| {
                let near: Vec<&Sparse> = nb.forward(i, params.k2 - 1).iter().map(|&j| &encodings[j]).collect();
                average(&near)
            })
            .collect()
    } else {
        encodings
    };

    let lambda = params.lambda;
    Ok(results
        .iter()
        .enumerate()
        .map(|(qi, r)| {
            let fused: Vec<f64> = (0..index.len())
                .map(|g| {
                    let j = p + g;
                    (1.0 - lambda) * jaccard(&encodings[qi], &encodings[j]) + lambda * dist[qi][j]
                })
                .collect();
            RetrievalResult::from_distances(
                r.query_ref,
                r.query_identity,
                &fused,
                r.valid_mask.clone(),
                index.identities(),
            )
        })
        .collect())
}
