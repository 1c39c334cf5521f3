//! One-dimensional Gaussian mixtures fitted by EM from a seeded k-means++ start.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::argmax;

/// Mixture weights, means and standard deviations, all in data units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// EM settings for [`fit_gmm`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub m: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            m: 5,
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

/// Fitted parameters plus the log-likelihood evaluated at the start of every iteration.
#[derive(Clone, Debug)]
pub struct GmmFit {
    pub params: GmmParams,
    pub log_likelihoods: Vec<f64>,
}

fn log_normal(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * PI).ln()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl GmmParams {
    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.weights.len();
        if m == 0 || self.means.len() != m || self.stds.len() != m {
            return Err(Error::InvalidBundle("GMM arrays must share a nonzero length".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidBundle("GMM weights are not a simplex".into()));
        }
        if self.means.iter().any(|x| !x.is_finite())
            || self.stds.iter().any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::InvalidBundle("GMM means/stds must be finite, stds positive".into()));
        }
        Ok(())
    }

    pub fn mixture_mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn mixture_variance(&self) -> f64 {
        let mu = self.mixture_mean();
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(w, (m, s))| w * (s * s + (m - mu) * (m - mu)))
            .sum()
    }

    pub fn log_likelihood(&self, values: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.m()];
        values
            .iter()
            .map(|&x| {
                for k in 0..self.m() {
                    buf[k] = self.weights[k].ln() + log_normal(x, self.means[k], self.stds[k]);
                }
                log_sum_exp(&buf)
            })
            .sum()
    }

    /// Normalized component probabilities for `x`: the posterior
    /// `pi_k N(x; eta_k, sigma_k)` when `weighted`, otherwise the likelihoods
    /// alone over components with nonzero weight.
    pub fn responsibilities(&self, x: f64, weighted: bool) -> Vec<f64> {
        let mut logp: Vec<f64> = (0..self.m())
            .map(|k| {
                if self.weights[k] <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    let prior = if weighted { self.weights[k].ln() } else { 0.0 };
                    prior + log_normal(x, self.means[k], self.stds[k])
                }
            })
            .collect();
        let lse = log_sum_exp(&logp);
        for v in &mut logp {
            *v = (*v - lse).exp();
        }
        logp
    }

    /// Component with the largest responsibility, smallest index on ties.
    pub fn select(&self, x: f64, weighted: bool) -> usize {
        argmax(&self.responsibilities(x, weighted))
    }
}

/// Population standard deviation.
pub(crate) fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// The floor applied to every fitted standard deviation.
pub fn sigma_floor(values: &[f64]) -> f64 {
    let s = std_dev(values);
    1e-4 * if s > 0.0 { s } else { 1.0 }
}

pub fn fit_gmm(values: &[f64], m: usize, max_iter: usize, tol: f64, seed: u64) -> Result<GmmParams> {
    fit_gmm_traced(values, GmmConfig { m, max_iter, tol }, seed).map(|f| f.params)
}

/// EM fit that also reports the per-iteration log-likelihood trace.
///
/// With fewer distinct values than `m`, EM runs over as many components as
/// there are distinct values and the rest are padded with zero weight.
pub fn fit_gmm_traced(values: &[f64], config: GmmConfig, seed: u64) -> Result<GmmFit> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if config.m == 0 {
        return Err(Error::ConfigInvalid("GMM needs at least one component".into()));
    }
    if let Some(bad) = values.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput(format!("GMM input contains {bad}")));
    }
    let n = values.len();
    let floor = sigma_floor(values);
    let global_std = std_dev(values);
    let mean_all = values.iter().sum::<f64>() / n as f64;

    let mut distinct = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    distinct.dedup();
    let active = config.m.min(distinct.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans_pp(values, active, &mut rng);

    // Hard assignment to the nearest center for starting weights and spreads.
    let mut counts = vec![0usize; active];
    let mut sums = vec![0.0; active];
    let mut sq = vec![0.0; active];
    for &x in values {
        let k = nearest(&centers, x);
        counts[k] += 1;
        sums[k] += x;
        sq[k] += x * x;
    }
    let mut weights = vec![0.0; active];
    let mut means = centers.clone();
    let mut stds = vec![0.0; active];
    for k in 0..active {
        let c = counts[k].max(1) as f64;
        weights[k] = counts[k].max(1) as f64;
        if counts[k] > 0 {
            means[k] = sums[k] / c;
        }
        let var = (sq[k] / c - means[k] * means[k]).max(0.0);
        let s = var.sqrt();
        stds[k] = if s > floor { s } else { global_std.max(floor) };
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let mut trace = Vec::new();
    let mut resp = vec![0.0; n * active];
    let mut buf = vec![0.0; active];
    for _ in 0..config.max_iter.max(1) {
        // E step
        let mut ll = 0.0;
        for (i, &x) in values.iter().enumerate() {
            for k in 0..active {
                buf[k] = weights[k].ln() + log_normal(x, means[k], stds[k]);
            }
            let lse = log_sum_exp(&buf);
            ll += lse;
            for k in 0..active {
                resp[i * active + k] = (buf[k] - lse).exp();
            }
        }
        let converged = trace.last().is_some_and(|&prev: &f64| ll - prev < config.tol);
        trace.push(ll);
        if converged {
            break;
        }
        // M step
        for k in 0..active {
            let nk: f64 = (0..n).map(|i| resp[i * active + k]).sum();
            weights[k] = nk / n as f64;
            if nk < 1e-12 * n as f64 {
                continue;
            }
            let mu = (0..n).map(|i| resp[i * active + k] * values[i]).sum::<f64>() / nk;
            let var = (0..n)
                .map(|i| resp[i * active + k] * (values[i] - mu) * (values[i] - mu))
                .sum::<f64>()
                / nk;
            means[k] = mu;
            stds[k] = var.sqrt().max(floor);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
    }
    // The last recorded likelihood belongs to the parameters left in place:
    // either the loop broke right after evaluating them, or it ran out of
    // iterations after an M step, in which case evaluate once more.
    if trace.len() == config.max_iter.max(1) {
        let p = GmmParams {
            weights: weights.clone(),
            means: means.clone(),
            stds: stds.clone(),
        };
        trace.push(p.log_likelihood(values));
    }

    for _ in active..config.m {
        weights.push(0.0);
        means.push(mean_all);
        stds.push(global_std.max(floor));
    }
    Ok(GmmFit {
        params: GmmParams {
            weights,
            means,
            stds,
        },
        log_likelihoods: trace,
    })
}

fn nearest(centers: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (k, c) in centers.iter().enumerate() {
        if (x - c).abs() < (x - centers[best]).abs() {
            best = k;
        }
    }
    best
}

fn kmeans_pp<R: Rng>(values: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    let mut centers = Vec::with_capacity(k);
    centers.push(values[rng.random_range(0..values.len())]);
    let mut d2: Vec<f64> = values.iter().map(|x| (x - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = values.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        // Guard against landing on an existing center through rounding.
        if d2[pick] <= 0.0 {
            pick = d2
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
                .map(|(i, _)| i)
                .expect("non-empty");
        }
        let c = values[pick];
        centers.push(c);
        for (d, x) in d2.iter_mut().zip(values) {
            *d = d.min((x - c).powi(2));
        }
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn normal_draws(n: usize, mean: f64, std: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mean, std).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    fn sample_moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
    }

    #[test]
    fn unimodal_moments() {
        let xs = normal_draws(10_000, 5.0, 1.0, 11);
        let p = fit_gmm(&xs, 5, 200, 1e-6, 0).unwrap();
        p.validate().unwrap();
        let (sm, sv) = sample_moments(&xs);
        // Oracle: the sample moments, which EM's M step matches at a fixed point.
        assert!((p.mixture_mean() - sm).abs() < 1e-6);
        assert!((p.mixture_mean() - 5.0).abs() < 0.05);
        assert!((p.mixture_variance() - sv).abs() < 0.02);
        assert!((p.mixture_variance() - 1.0).abs() < 0.1);
    }

    #[test]
    fn two_component_dominant_means() {
        let mut xs = normal_draws(5_000, -2.0, 0.5, 1);
        xs.extend(normal_draws(5_000, 3.0, 1.0, 2));
        let p = fit_gmm(&xs, 5, 500, 1e-8, 7).unwrap();
        let mut order: Vec<usize> = (0..p.m()).collect();
        order.sort_by(|&a, &b| p.weights[b].partial_cmp(&p.weights[a]).unwrap());
        let mut top = [p.means[order[0]], p.means[order[1]]];
        top.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((top[0] + 2.0).abs() < 0.2, "{p:?}");
        assert!((top[1] - 3.0).abs() < 0.2, "{p:?}");
    }

    #[test]
    fn constant_column_collapses() {
        let xs = vec![7.0; 100];
        let p = fit_gmm(&xs, 5, 100, 1e-6, 3).unwrap();
        p.validate().unwrap();
        let k = argmax(&p.weights);
        assert_eq!(p.means[k], 7.0);
        assert_eq!(p.stds[k], 1e-4);
        assert!(p.weights[k] >= 1.0 - 1e-6);
        assert_eq!(p.m(), 5);
    }

    #[test]
    fn empty_and_non_finite_rejected() {
        assert!(matches!(fit_gmm(&[], 5, 10, 1e-6, 0), Err(Error::EmptyInput)));
        assert!(fit_gmm(&[1.0, f64::NAN], 5, 10, 1e-6, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let xs = normal_draws(2_000, 0.0, 3.0, 5);
        assert_eq!(
            fit_gmm(&xs, 5, 50, 1e-6, 9).unwrap(),
            fit_gmm(&xs, 5, 50, 1e-6, 9).unwrap()
        );
    }

    #[test]
    fn log_likelihood_never_decreases() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = rng.random_range(20..400);
            let k = rng.random_range(1..4);
            let xs: Vec<f64> = (0..n)
                .map(|i| {
                    let c = (i % k) as f64 * rng.random_range(1.0..6.0);
                    c + Normal::new(0.0, rng.random_range(0.1..2.0))
                        .unwrap()
                        .sample(&mut rng)
                })
                .collect();
            let fit = fit_gmm_traced(&xs, GmmConfig { m: 5, max_iter: 60, tol: 1e-12 }, seed).unwrap();
            for w in fit.log_likelihoods.windows(2) {
                assert!(w[1] >= w[0] - 1e-10, "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn responsibilities_are_simplex() {
        let p = GmmParams {
            weights: vec![0.3, 0.7],
            means: vec![0.0, 4.0],
            stds: vec![1.0, 0.5],
        };
        for x in [-1e6, -3.0, 0.0, 2.0, 4.0, 1e6] {
            for weighted in [true, false] {
                let u = p.responsibilities(x, weighted);
                assert!(u.iter().all(|&v| v >= 0.0));
                assert!((u.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
