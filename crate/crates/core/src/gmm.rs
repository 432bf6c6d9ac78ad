//! Full-covariance Gaussian mixtures fitted by expectation maximization, with
//! the component count chosen by BIC.
//!
//! Everything here works on points in the normalized 4-D feature space; the
//! action classifier in [`crate::policy`] builds one mixture per action.

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed::rng_from;
use crate::state::FEATURE_DIM;

pub type Point = [f64; FEATURE_DIM];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Largest component count tried per mixture.
    pub k_max: usize,
    /// Lower bound on every covariance eigenvalue.
    pub cov_floor: f64,
    /// Relative log-likelihood change below which EM stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            k_max: 8,
            cov_floor: 1e-4,
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

/// A multivariate normal with its Cholesky factor cached for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: Vector4<f64>,
    cov: Matrix4<f64>,
    chol_inv: Matrix4<f64>,
    log_norm: f64,
}

impl Gaussian {
    /// `cov` must be symmetric positive definite; callers floor it first.
    pub fn new(mean: Point, cov: [[f64; FEATURE_DIM]; FEATURE_DIM]) -> Option<Self> {
        let mean = Vector4::from_column_slice(&mean);
        let cov = Matrix4::from_fn(|r, c| cov[r][c]);
        Self::from_parts(mean, cov)
    }

    fn from_parts(mean: Vector4<f64>, cov: Matrix4<f64>) -> Option<Self> {
        let chol = cov.cholesky()?;
        let l = chol.l();
        let log_det: f64 = 2.0 * (0..FEATURE_DIM).map(|i| l[(i, i)].ln()).sum::<f64>();
        let chol_inv = l
            .solve_lower_triangular(&Matrix4::identity())
            .expect("cholesky factor has a positive diagonal");
        let log_norm = -0.5 * (FEATURE_DIM as f64 * LN_2PI + log_det);
        Some(Gaussian {
            mean,
            cov,
            chol_inv,
            log_norm,
        })
    }

    pub fn mean(&self) -> Point {
        [self.mean[0], self.mean[1], self.mean[2], self.mean[3]]
    }

    pub fn covariance(&self) -> [[f64; FEATURE_DIM]; FEATURE_DIM] {
        let mut out = [[0.0; FEATURE_DIM]; FEATURE_DIM];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.cov[(r, c)];
            }
        }
        out
    }

    pub fn log_pdf(&self, x: &Point) -> f64 {
        let diff = Vector4::from_column_slice(x) - self.mean;
        let z = self.chol_inv * diff;
        self.log_norm - 0.5 * z.norm_squared()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.cov)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Clips the eigenvalues of a symmetric matrix from below. This is the exact
/// maximizer of the Gaussian likelihood under an eigenvalue floor, so EM stays
/// monotone with it in the M-step.
pub fn floor_covariance(cov: &Matrix4<f64>, floor: f64) -> Matrix4<f64> {
    // Entries this small cannot move an eigenvalue across the floor, and the
    // eigensolver returns NaN when they underflow.
    let sym = ((cov + cov.transpose()) * 0.5).map(|v| if v.abs() < floor * 1e-12 { 0.0 } else { v });
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().chain(eig.eigenvectors.iter()).any(|v| !v.is_finite()) {
        return sym + Matrix4::identity() * floor;
    }
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let q = eig.eigenvectors;
    let out = q * Matrix4::from_diagonal(&clipped) * q.transpose();
    (out + out.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub gaussian: Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub components: Vec<Component>,
}

impl Mixture {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// `ln w_j + ln N_j(x)` for every component.
    pub fn weighted_log_densities(&self, x: &Point) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.weight.ln() + c.gaussian.log_pdf(x))
            .collect()
    }

    pub fn log_density(&self, x: &Point) -> f64 {
        log_sum_exp(&self.weighted_log_densities(x))
    }

    pub fn log_likelihood(&self, data: &[Point]) -> f64 {
        data.iter().map(|x| self.log_density(x)).sum()
    }

    /// Number of free parameters (means, full covariances, weights).
    pub fn parameter_count(&self) -> usize {
        let d = FEATURE_DIM;
        let k = self.components.len();
        k * (d + d * (d + 1) / 2) + k.saturating_sub(1)
    }

    pub fn bic(&self, data: &[Point]) -> f64 {
        -2.0 * self.log_likelihood(data) + self.parameter_count() as f64 * (data.len() as f64).ln()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-iteration record of one EM run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmTrace {
    /// Data log-likelihood before each M-step, plus the final value.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

fn sq_dist(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding. Returns indices into `data`.
fn kmeans_pp(data: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut centers = vec![rng.random_range(0..data.len())];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &data[centers[0]])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = data.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // all remaining points coincide with a center
            (0..data.len())
                .find(|i| !centers.contains(i))
                .unwrap_or(centers[0])
        };
        centers.push(next);
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &data[next]));
        }
    }
    centers
}

fn weighted_moments(
    data: &[Point],
    resp: impl Fn(usize) -> f64,
    floor: f64,
) -> (f64, Vector4<f64>, Matrix4<f64>) {
    let mut nk = 0.0;
    let mut mean = Vector4::zeros();
    for (i, x) in data.iter().enumerate() {
        let r = resp(i);
        nk += r;
        mean += Vector4::from_column_slice(x) * r;
    }
    if nk <= 0.0 {
        return (0.0, mean, Matrix4::identity() * floor);
    }
    mean /= nk;
    let mut cov = Matrix4::zeros();
    for (i, x) in data.iter().enumerate() {
        let r = resp(i);
        if r == 0.0 {
            continue;
        }
        let d = Vector4::from_column_slice(x) - mean;
        cov += (d * d.transpose()) * r;
    }
    cov /= nk;
    (nk, mean, floor_covariance(&cov, floor))
}

fn initial_mixture(data: &[Point], k: usize, cfg: &EmConfig, rng: &mut ChaCha8Rng) -> Mixture {
    let n = data.len();
    let centers = kmeans_pp(data, k, rng);
    let assign: Vec<usize> = data
        .iter()
        .map(|x| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, &c) in centers.iter().enumerate() {
                let d = sq_dist(x, &data[c]);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect();
    let (_, _, global_cov) = weighted_moments(data, |_| 1.0, cfg.cov_floor);
    let components = (0..k)
        .map(|j| {
            let (nk, mean, cov) =
                weighted_moments(data, |i| if assign[i] == j { 1.0 } else { 0.0 }, cfg.cov_floor);
            let (mean, cov) = if nk < 2.0 {
                (Vector4::from_column_slice(&data[centers[j]]), global_cov)
            } else {
                (mean, cov)
            };
            Component {
                weight: nk / n as f64,
                gaussian: Gaussian::from_parts(mean, cov).expect("floored covariance is SPD"),
            }
        })
        .collect();
    Mixture { components }
}

/// Runs EM for a fixed component count from a k-means++ start.
pub fn fit_em(data: &[Point], k: usize, cfg: &EmConfig, rng: &mut ChaCha8Rng) -> (Mixture, EmTrace) {
    assert!(!data.is_empty() && k >= 1 && k <= data.len());
    let n = data.len();
    let mut mix = initial_mixture(data, k, cfg, rng);
    let mut trace = EmTrace::default();
    let mut resp = vec![0.0; n * k];
    let mut prev_ll = f64::NEG_INFINITY;

    for _ in 0..cfg.max_iter {
        // E-step
        let mut ll = 0.0;
        for (i, x) in data.iter().enumerate() {
            let lw = mix.weighted_log_densities(x);
            let norm = log_sum_exp(&lw);
            ll += norm;
            for j in 0..k {
                resp[i * k + j] = (lw[j] - norm).exp();
            }
        }
        trace.log_likelihoods.push(ll);
        if prev_ll.is_finite() && (ll - prev_ll).abs() <= cfg.tol * prev_ll.abs().max(1.0) {
            trace.converged = true;
            return (mix, trace);
        }
        prev_ll = ll;

        // M-step
        for j in 0..k {
            let (nk, mean, cov) = weighted_moments(data, |i| resp[i * k + j], cfg.cov_floor);
            let comp = &mut mix.components[j];
            comp.weight = nk / n as f64;
            if nk > 1e-12 {
                comp.gaussian = Gaussian::from_parts(mean, cov).expect("floored covariance is SPD");
            }
        }
    }
    trace.log_likelihoods.push(mix.log_likelihood(data));
    (mix, trace)
}

/// Outcome of the BIC sweep for one dataset.
#[derive(Debug, Clone)]
pub struct BicFit {
    pub mixture: Mixture,
    pub selected_k: usize,
    /// `(k, bic)` for every count tried.
    pub scores: Vec<(usize, f64)>,
}

/// Fits `k = 1..=min(k_max, n)` and keeps the lowest BIC (ties go to the
/// smaller model).
pub fn fit_bic(data: &[Point], cfg: &EmConfig, seed: u64) -> BicFit {
    assert!(!data.is_empty());
    let k_top = cfg.k_max.max(1).min(data.len());
    let mut best: Option<(f64, usize, Mixture)> = None;
    let mut scores = Vec::with_capacity(k_top);
    for k in 1..=k_top {
        let mut rng = rng_from(seed, &[k as u64]);
        let (mix, _) = fit_em(data, k, cfg, &mut rng);
        let bic = mix.bic(data);
        scores.push((k, bic));
        if best.as_ref().is_none_or(|(b, _, _)| bic < *b) {
            best = Some((bic, k, mix));
        }
    }
    let (_, selected_k, mixture) = best.expect("at least one candidate");
    BicFit {
        mixture,
        selected_k,
        scores,
    }
}
