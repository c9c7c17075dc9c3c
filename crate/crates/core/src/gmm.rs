//! Gaussian mixture model of demonstrated catch positions.
//!
//! Fitting is plain EM with full covariances, k-means++ seeding from a seeded RNG and an
//! eigenvalue floor on every covariance. The number of components is chosen by BIC.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound on covariance eigenvalues, m^2.
pub const COVARIANCE_FLOOR: f64 = 1e-6;

/// Slack allowed in the EM monotonicity check, relative to |LL|.
const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("need at least {needed} distinct points for {k} components, have {have}")]
    InsufficientData { k: usize, needed: usize, have: usize },
    #[error("all demonstration points are identical")]
    Degenerate,
    #[error("component count must be at least 1")]
    ZeroComponents,
    #[error("EM log-likelihood decreased from {before} to {after} at iteration {iteration}")]
    NotMonotone { iteration: usize, before: f64, after: f64 },
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("malformed record on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

impl GaussianComponent {
    fn precision_and_log_norm(&self) -> Result<(Matrix3<f64>, f64), GmmError> {
        let chol = self
            .covariance
            .cholesky()
            .ok_or_else(|| GmmError::InvalidMixture("covariance is not positive definite".into()))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok((chol.inverse(), -0.5 * (3.0 * (2.0 * PI).ln() + log_det)))
    }
}

/// Weighted sum of 3-D Gaussians. Precisions and normalizers are cached on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRepr", into = "MixtureRepr")]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
    precisions: Vec<Matrix3<f64>>,
    log_norms: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureRepr {
    components: Vec<GaussianComponent>,
}

impl TryFrom<MixtureRepr> for GaussianMixture {
    type Error = GmmError;
    fn try_from(r: MixtureRepr) -> Result<Self, GmmError> {
        GaussianMixture::new(r.components)
    }
}

impl From<GaussianMixture> for MixtureRepr {
    fn from(m: GaussianMixture) -> Self {
        MixtureRepr { components: m.components }
    }
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self, GmmError> {
        if components.is_empty() {
            return Err(GmmError::ZeroComponents);
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 || components.iter().any(|c| !(c.weight > 0.0 && c.weight <= 1.0)) {
            return Err(GmmError::InvalidMixture(format!("weights must lie in (0, 1] and sum to 1, sum is {total}")));
        }
        let mut precisions = Vec::with_capacity(components.len());
        let mut log_norms = Vec::with_capacity(components.len());
        for c in &components {
            if (c.covariance - c.covariance.transpose()).abs().max() > 1e-12 * c.covariance.abs().max() {
                return Err(GmmError::InvalidMixture("covariance is not symmetric".into()));
            }
            let (p, n) = c.precision_and_log_norm()?;
            precisions.push(p);
            log_norms.push(n);
        }
        Ok(Self { components, precisions, log_norms })
    }

    /// A single Gaussian with the given mean and covariance.
    pub fn single(mean: Vector3<f64>, covariance: Matrix3<f64>) -> Result<Self, GmmError> {
        Self::new(vec![GaussianComponent { weight: 1.0, mean, covariance }])
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Inverse covariance of component `k`.
    pub fn precision(&self, k: usize) -> &Matrix3<f64> {
        &self.precisions[k]
    }

    fn component_log_densities(&self, x: &Vector3<f64>, out: &mut [f64]) {
        for (k, c) in self.components.iter().enumerate() {
            let r = x - c.mean;
            out[k] = c.weight.ln() + self.log_norms[k] - 0.5 * r.dot(&(self.precisions[k] * r));
        }
    }

    pub fn log_density(&self, x: &Vector3<f64>) -> f64 {
        let mut buf = [0.0; 16];
        if self.k() <= buf.len() {
            self.component_log_densities(x, &mut buf[..self.k()]);
            log_sum_exp(&buf[..self.k()])
        } else {
            let mut v = vec![0.0; self.k()];
            self.component_log_densities(x, &mut v);
            log_sum_exp(&v)
        }
    }

    pub fn log_likelihood(&self, data: &[Vector3<f64>]) -> f64 {
        data.iter().map(|x| self.log_density(x)).sum()
    }

    /// The same mixture translated by `offset`.
    pub fn shifted(&self, offset: &Vector3<f64>) -> Self {
        let mut out = self.clone();
        for c in &mut out.components {
            c.mean += offset;
        }
        out
    }

    /// Parameter count used by BIC: weights, means and symmetric covariances.
    pub fn free_parameters(&self) -> usize {
        free_parameters(self.k())
    }
}

pub fn free_parameters(k: usize) -> usize {
    (k - 1) + 3 * k + 6 * k
}

pub fn log_density(mix: &GaussianMixture, x: &Vector3<f64>) -> f64 {
    mix.log_density(x)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Catch positions recorded from demonstrations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DemoDataset {
    pub points: Vec<Vector3<f64>>,
    pub source: String,
}

impl DemoDataset {
    /// Draws `n` points from an axis-aligned Gaussian.
    pub fn synthesize(mean: Vector3<f64>, std: Vector3<f64>, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| mean + Vector3::from_fn(|i, _| std[i] * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self { points, source: format!("synthetic(seed={seed})") }
    }

    pub fn distinct_points(&self) -> usize {
        let mut pts: Vec<[u64; 3]> = self.points.iter().map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]).collect();
        pts.sort_unstable();
        pts.dedup();
        pts.len()
    }

    /// One `x y z` record per line; `#` starts a comment.
    pub fn write_records<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# source {}", self.source)?;
        writeln!(out, "# x y z")?;
        for p in &self.points {
            writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z)?;
        }
        Ok(())
    }

    pub fn read_records<R: BufRead>(input: R, source: &str) -> Result<Self, GmmError> {
        let mut points = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let vals: Vec<f64> = body
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e: std::num::ParseFloatError| GmmError::Parse { line: idx + 1, msg: e.to_string() })?;
            if vals.len() != 3 {
                return Err(GmmError::Parse { line: idx + 1, msg: format!("expected 3 fields, found {}", vals.len()) });
            }
            points.push(Vector3::new(vals[0], vals[1], vals[2]));
        }
        Ok(Self { points, source: source.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 500, seed: 0 }
    }
}

/// Result of one EM run.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub mixture: GaussianMixture,
    /// Training log-likelihood after each E-step, non-decreasing.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

impl EmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood.last().expect("EM records at least one iteration")
    }
}

fn floor_covariance(c: &Matrix3<f64>) -> Matrix3<f64> {
    let sym = (c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.min() >= COVARIANCE_FLOOR {
        return sym;
    }
    let vals = eig.eigenvalues.map(|v| v.max(COVARIANCE_FLOOR));
    let out = eig.eigenvectors * Matrix3::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (out + out.transpose()) * 0.5
}

fn weighted_moments(data: &[Vector3<f64>], w: impl Fn(usize) -> f64) -> (f64, Vector3<f64>, Matrix3<f64>) {
    let total: f64 = (0..data.len()).map(&w).sum();
    let mean = data.iter().enumerate().map(|(i, x)| x * w(i)).sum::<Vector3<f64>>() / total;
    let cov = data
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let r = x - mean;
            r * r.transpose() * w(i)
        })
        .sum::<Matrix3<f64>>()
        / total;
    (total, mean, cov)
}

/// k-means++ seeding: first center uniform, the rest with probability proportional to D^2.
fn seed_means(data: &[Vector3<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let mut means = vec![data[rng.random_range(0..data.len())]];
    while means.len() < k {
        let d2: Vec<f64> = data
            .iter()
            .map(|x| means.iter().map(|m| (x - m).norm_squared()).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = data.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if pick < *d {
                chosen = i;
                break;
            }
            pick -= d;
        }
        means.push(data[chosen]);
    }
    means
}

pub fn fit_em(data: &DemoDataset, k: usize, settings: &EmSettings) -> Result<EmFit, GmmError> {
    if k == 0 {
        return Err(GmmError::ZeroComponents);
    }
    let distinct = data.distinct_points();
    if distinct == 1 {
        return Err(GmmError::Degenerate);
    }
    if distinct < k + 1 {
        return Err(GmmError::InsufficientData { k, needed: k + 1, have: distinct });
    }
    let pts = &data.points;
    let n = pts.len();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    let (_, _, global_cov) = weighted_moments(pts, |_| 1.0);
    let shared = floor_covariance(&global_cov);
    let mut mixture = GaussianMixture::new(
        seed_means(pts, k, &mut rng)
            .into_iter()
            .map(|mean| GaussianComponent { weight: 1.0 / k as f64, mean, covariance: shared })
            .collect(),
    )?;

    let mut resp = vec![0.0; n * k];
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    for iteration in 0..settings.max_iter.max(1) {
        // E-step
        let mut ll = 0.0;
        for (i, x) in pts.iter().enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            mixture.component_log_densities(x, row);
            let norm = log_sum_exp(row);
            ll += norm;
            for r in row.iter_mut() {
                *r = (*r - norm).exp();
            }
        }
        if let Some(&prev) = history.last() {
            if ll < prev - MONOTONE_SLACK * prev.abs().max(1.0) {
                return Err(GmmError::NotMonotone { iteration, before: prev, after: ll });
            }
            history.push(ll);
            if (ll - prev).abs() < settings.tol {
                converged = true;
                break;
            }
        } else {
            history.push(ll);
        }

        // M-step
        let components = (0..k)
            .map(|j| {
                let (nk, mean, cov) = weighted_moments(pts, |i| resp[i * k + j]);
                GaussianComponent { weight: nk / n as f64, mean, covariance: floor_covariance(&cov) }
            })
            .collect::<Vec<_>>();
        // renormalize away rounding so the weights sum to one exactly enough
        let total: f64 = components.iter().map(|c| c.weight).sum();
        let components = components
            .into_iter()
            .map(|mut c| {
                c.weight /= total;
                c.weight = c.weight.max(f64::MIN_POSITIVE);
                c
            })
            .collect();
        mixture = GaussianMixture::new(components)?;
    }
    // the last M-step has not been scored yet
    let final_ll = mixture.log_likelihood(pts);
    if let Some(&prev) = history.last() {
        if !converged {
            if final_ll < prev - MONOTONE_SLACK * prev.abs().max(1.0) {
                return Err(GmmError::NotMonotone { iteration: history.len(), before: prev, after: final_ll });
            }
            history.push(final_ll);
        }
    }
    Ok(EmFit { mixture, log_likelihood: history, converged })
}

/// Bayesian information criterion; lower is better.
pub fn bic(mix: &GaussianMixture, data: &DemoDataset) -> f64 {
    let n = data.points.len() as f64;
    mix.free_parameters() as f64 * n.ln() - 2.0 * mix.log_likelihood(&data.points)
}

/// Outcome of BIC model selection.
#[derive(Debug, Clone)]
pub struct Selection {
    pub fit: EmFit,
    pub k: usize,
    /// `(k, bic)` for every candidate that could be fit.
    pub scores: Vec<(usize, f64)>,
}

/// Fits every K in `k_range` and keeps the lowest BIC; ties go to the smaller K.
pub fn select_k(
    data: &DemoDataset,
    k_range: impl IntoIterator<Item = usize>,
    settings: &EmSettings,
) -> Result<Selection, GmmError> {
    let mut ks: Vec<usize> = k_range.into_iter().collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(GmmError::ZeroComponents);
    }
    let mut best: Option<(f64, usize, EmFit)> = None;
    let mut scores = Vec::new();
    for k in ks {
        let fit = fit_em(data, k, settings)?;
        let score = bic(&fit.mixture, data);
        scores.push((k, score));
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, k, fit));
        }
    }
    let (_, k, fit) = best.expect("non-empty range");
    Ok(Selection { fit, k, scores })
}
