//! Lloyd's K-means with k-means++ seeding, farthest-point repair of empty
//! clusters, a Hartigan point-transfer pass and multiple restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sq_dist, FitOptions};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

pub(super) fn check_points(points: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidInput("number of clusters must be positive".into()));
    }
    if points.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} points cannot form {k} clusters",
            points.len()
        )));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidInput("points must share a positive dimension".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("points must be finite".into()));
    }
    Ok(dim)
}

/// Clusters `points` into `k` groups. Runs `opts.n_init` seeded restarts and
/// keeps the lowest inertia (earliest restart on ties).
pub fn kmeans_fit(points: &[Vec<f64>], k: usize, opts: &FitOptions) -> Result<KMeansFit> {
    check_points(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..opts.n_init.max(1) {
        let fit = single_run(points, k, opts, &mut rng);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // Every remaining point coincides with a centre.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[pick]));
        }
    }
    centers
}

fn assign(points: &[Vec<f64>], centers: &[Vec<f64>], out: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (slot, p) in out.iter_mut().zip(points) {
        let (best, d) = centers
            .iter()
            .enumerate()
            .map(|(c, ctr)| (c, sq_dist(p, ctr)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        *slot = best;
        inertia += d;
    }
    inertia
}

fn recompute_centers(points: &[Vec<f64>], assignments: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            for v in s.iter_mut() {
                *v /= c as f64;
            }
        }
    }
    (sums, counts)
}

fn inertia_of(points: &[Vec<f64>], centers: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centers[a]))
        .sum()
}

fn single_run(points: &[Vec<f64>], k: usize, opts: &FitOptions, rng: &mut impl Rng) -> KMeansFit {
    let dim = points[0].len();
    let mut centers = plus_plus_init(points, k, rng);
    let mut assignments = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..opts.max_iter.max(1) {
        iterations += 1;
        history.push(assign(points, &centers, &mut assignments));
        let (mut next, counts) = recompute_centers(points, &assignments, k, dim);
        let mut taken = vec![false; points.len()];
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed with the point farthest from its current centre.
                let far = (0..points.len())
                    .filter(|&i| counts[assignments[i]] > 1 && !taken[i])
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a], &next[assignments[a]]);
                        let db = sq_dist(&points[b], &next[assignments[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    });
                match far {
                    Some(i) => {
                        taken[i] = true;
                        next[c] = points[i].clone();
                    }
                    None => next[c] = centers[c].clone(),
                }
            }
        }
        let shift = centers
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = next;
        if shift < opts.tol {
            break;
        }
    }
    assign(points, &centers, &mut assignments);
    let (recomputed, counts) = recompute_centers(points, &assignments, k, dim);
    for ((c, r), &n) in centers.iter_mut().zip(recomputed).zip(&counts) {
        if n > 0 {
            *c = r;
        }
    }
    history.push(inertia_of(points, &centers, &assignments));

    if hartigan_pass(points, &mut centers, &mut assignments) {
        history.push(inertia_of(points, &centers, &assignments));
    }
    let inertia = inertia_of(points, &centers, &assignments);
    KMeansFit {
        centers,
        assignments,
        inertia,
        inertia_history: history,
        iterations,
    }
}

/// Moves single points between clusters while that strictly lowers the
/// inertia, accounting for the centroid shift of both clusters. Returns
/// whether anything moved.
fn hartigan_pass(points: &[Vec<f64>], centers: &mut [Vec<f64>], assignments: &mut [usize]) -> bool {
    let k = centers.len();
    let dim = points[0].len();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    let mut moved_any = false;
    // Each accepted move strictly lowers the inertia, so this terminates;
    // the cap only guards against floating-point ping-pong.
    for _ in 0..1000 {
        let mut moved = false;
        for i in 0..points.len() {
            let from = assignments[i];
            if counts[from] < 2 {
                continue;
            }
            let nf = counts[from] as f64;
            let removal_gain = nf / (nf - 1.0) * sq_dist(&points[i], &centers[from]);
            let mut best: Option<(usize, f64)> = None;
            for to in 0..k {
                if to == from {
                    continue;
                }
                let nt = counts[to] as f64;
                let cost = nt / (nt + 1.0) * sq_dist(&points[i], &centers[to]);
                let delta = cost - removal_gain;
                if delta < -1e-12 * (1.0 + removal_gain) && best.is_none_or(|(_, d)| delta < d) {
                    best = Some((to, delta));
                }
            }
            if let Some((to, _)) = best {
                let (nf, nt) = (counts[from] as f64, counts[to] as f64);
                for d in 0..dim {
                    let x = points[i][d];
                    centers[from][d] = (centers[from][d] * nf - x) / (nf - 1.0);
                    centers[to][d] = (centers[to][d] * nt + x) / (nt + 1.0);
                }
                counts[from] -= 1;
                counts[to] += 1;
                assignments[i] = to;
                moved = true;
                moved_any = true;
            }
        }
        if !moved {
            break;
        }
    }
    if moved_any {
        // Remove accumulated drift from the incremental updates.
        let (exact, _) = recompute_centers(points, assignments, k, dim);
        for (c, e) in centers.iter_mut().zip(exact) {
            *c = e;
        }
    }
    moved_any
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(seed: u64) -> FitOptions {
        FitOptions {
            max_iter: 100,
            tol: 1e-9,
            seed,
            n_init: 4,
        }
    }

    fn sorted_1d(centers: &[Vec<f64>]) -> Vec<f64> {
        let mut v: Vec<f64> = centers.iter().map(|c| c[0]).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn coincident_pairs() {
        let pts = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]];
        let fit = kmeans_fit(&pts, 2, &opts(0)).unwrap();
        let mut c = fit.centers.clone();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(c, vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(fit.inertia, 0.0);
    }

    #[test]
    fn one_dimensional_two_groups() {
        let pts: Vec<Vec<f64>> = [0.0, 0.1, 0.2, 0.8, 0.9, 1.0].iter().map(|&x| vec![x]).collect();
        let fit = kmeans_fit(&pts, 2, &opts(3)).unwrap();
        let c = sorted_1d(&fit.centers);
        assert!((c[0] - 0.1).abs() < 1e-12 && (c[1] - 0.9).abs() < 1e-12, "{c:?}");
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let fit = kmeans_fit(&pts, 7, &opts(1)).unwrap();
        assert_eq!(fit.inertia, 0.0);
        let mut a = fit.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 7);
    }

    #[test]
    fn too_few_points() {
        let pts = vec![vec![0.0]; 2];
        assert!(matches!(kmeans_fit(&pts, 3, &opts(0)), Err(Error::InsufficientData(_))));
        assert!(kmeans_fit(&pts, 0, &opts(0)).is_err());
    }

    #[test]
    fn duplicates_with_more_clusters_than_distinct_points() {
        let pts = vec![vec![0.5]; 5];
        let fit = kmeans_fit(&pts, 3, &opts(0)).unwrap();
        assert_eq!(fit.inertia, 0.0);
        assert_eq!(fit.centers.len(), 3);
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let pts: Vec<Vec<f64>> = (0..60)
                .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
                .collect();
            let fit = kmeans_fit(&pts, 5, &opts(trial)).unwrap();
            for w in fit.inertia_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", fit.inertia_history);
            }
            assert!((fit.inertia - fit.inertia_history.last().unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let pts: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64).cos()]).collect();
        assert_eq!(kmeans_fit(&pts, 4, &opts(5)).unwrap(), kmeans_fit(&pts, 4, &opts(5)).unwrap());
    }
}
