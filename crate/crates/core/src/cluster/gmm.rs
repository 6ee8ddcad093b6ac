//! Gaussian mixtures with diagonal covariances, fitted by EM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::kmeans::{check_points, kmeans_fit};
use super::FitOptions;
use crate::error::{Error, Result};

/// Lower bound applied to every variance entry.
pub const VARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Diagonal covariance entries, one vector per component.
    pub variances: Vec<Vec<f64>>,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean per-point log-likelihood after initialization and after every
    /// M-step.
    pub log_likelihood_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl GmmModel {
    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        let sum: f64 = self.weights.iter().sum();
        let ok = k > 0
            && self.means.len() == k
            && self.variances.len() == k
            && (sum - 1.0).abs() <= 1e-9
            && self.weights.iter().all(|w| *w >= 0.0)
            && self.means.iter().all(|m| m.len() == self.dim)
            && self
                .variances
                .iter()
                .all(|v| v.len() == self.dim && v.iter().all(|x| *x >= VARIANCE_FLOOR));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("malformed mixture model".into()))
        }
    }

    /// `log w_k + log N(x | mu_k, diag(var_k))` for every component.
    fn component_log_densities(&self, x: &[f64], out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            let w = self.weights[k];
            if w <= 0.0 {
                *slot = f64::NEG_INFINITY;
                continue;
            }
            let mut acc = 0.0;
            for ((xi, mu), var) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
                let d = xi - mu;
                acc += d * d / var + var.ln() + LN_2PI;
            }
            *slot = w.ln() - 0.5 * acc;
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.num_components()];
        self.component_log_densities(x, &mut buf);
        log_sum_exp(&buf)
    }

    /// Mean log-likelihood per point.
    pub fn mean_log_likelihood(&self, points: &[Vec<f64>]) -> f64 {
        points.iter().map(|p| self.log_density(p)).sum::<f64>() / points.len() as f64
    }

    pub fn mixture_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for (m, v) in mean.iter_mut().zip(mu) {
                *m += w * v;
            }
        }
        mean
    }

    /// Per-dimension variance of the mixture distribution.
    pub fn mixture_variance(&self) -> Vec<f64> {
        let mean = self.mixture_mean();
        let mut var = vec![0.0; self.dim];
        for ((w, mu), sig) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            for d in 0..self.dim {
                var[d] += w * (sig[d] + (mu[d] - mean[d]).powi(2));
            }
        }
        var
    }

    fn sample_one(&self, rng: &mut impl Rng) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = self.weights.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = k;
                break;
            }
        }
        self.means[comp]
            .iter()
            .zip(&self.variances[comp])
            .map(|(mu, var)| {
                let z: f64 = StandardNormal.sample(rng);
                mu + var.sqrt() * z
            })
            .collect()
    }
}

/// Draws `n` points: a component from the weights, then a Gaussian draw.
/// Coordinates are clamped to `[0, 1]`, the normalized pose range.
pub fn gmm_sample(model: &GmmModel, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gmm_sample_with(model, n, &mut rng)
}

pub(crate) fn gmm_sample_with(model: &GmmModel, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut x = model.sample_one(rng);
            for v in &mut x {
                *v = v.clamp(0.0, 1.0);
            }
            x
        })
        .collect()
}

/// Fits a `k`-component diagonal mixture, initialized from K-means.
pub fn gmm_fit(points: &[Vec<f64>], k: usize, opts: &FitOptions) -> Result<GmmFit> {
    let dim = check_points(points, k)?;
    let n = points.len();
    let init = kmeans_fit(points, k, opts)?;

    let mut counts = vec![0usize; k];
    let mut variances = vec![vec![0.0; dim]; k];
    for (p, &a) in points.iter().zip(&init.assignments) {
        counts[a] += 1;
        for d in 0..dim {
            variances[a][d] += (p[d] - init.centers[a][d]).powi(2);
        }
    }
    for (var, &c) in variances.iter_mut().zip(&counts) {
        for v in var.iter_mut() {
            *v = if c > 0 { *v / c as f64 } else { 0.0 }.max(VARIANCE_FLOOR);
        }
    }
    let mut model = GmmModel {
        weights: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        means: init.centers,
        variances,
        dim,
    };

    let mut resp = vec![vec![0.0; k]; n];
    let mut history = Vec::new();
    let mut prev = e_step(&model, points, &mut resp);
    history.push(prev);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        m_step(&mut model, points, &resp);
        let ll = e_step(&model, points, &mut resp);
        if !ll.is_finite() {
            return Err(Error::Divergence("GMM log-likelihood is not finite".into()));
        }
        history.push(ll);
        let gain = ll - prev;
        prev = ll;
        if gain < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(GmmFit {
        model,
        log_likelihood_history: history,
        iterations,
        converged,
    })
}

/// Fills `resp` with posterior responsibilities and returns the mean
/// log-likelihood.
fn e_step(model: &GmmModel, points: &[Vec<f64>], resp: &mut [Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (p, r) in points.iter().zip(resp.iter_mut()) {
        model.component_log_densities(p, r);
        let lse = log_sum_exp(r);
        for v in r.iter_mut() {
            *v = (*v - lse).exp();
        }
        total += lse;
    }
    total / points.len() as f64
}

fn m_step(model: &mut GmmModel, points: &[Vec<f64>], resp: &[Vec<f64>]) {
    let n = points.len() as f64;
    let k = model.num_components();
    for c in 0..k {
        let nk: f64 = resp.iter().map(|r| r[c]).sum();
        if nk <= f64::MIN_POSITIVE {
            // Keep the parameters of a component that owns no mass.
            model.weights[c] = 0.0;
            continue;
        }
        model.weights[c] = nk / n;
        let mut mean = vec![0.0; model.dim];
        for (p, r) in points.iter().zip(resp) {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += r[c] * x;
            }
        }
        for m in &mut mean {
            *m /= nk;
        }
        let mut var = vec![0.0; model.dim];
        for (p, r) in points.iter().zip(resp) {
            for d in 0..model.dim {
                var[d] += r[c] * (p[d] - mean[d]).powi(2);
            }
        }
        for v in &mut var {
            // The floored value is the constrained maximizer, so EM stays
            // monotone.
            *v = (*v / nk).max(VARIANCE_FLOOR);
        }
        model.means[c] = mean;
        model.variances[c] = var;
    }
    let sum: f64 = model.weights.iter().sum();
    for w in &mut model.weights {
        *w /= sum;
    }
}
