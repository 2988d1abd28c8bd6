//! Gaussian mixture priors.
//!
//! Noise-perturbed mixtures stay mixtures: `p_σ = Σ πᵢ N(μᵢ, Σᵢ + σ² I)`.
//! [`PerturbedGmm`] factors the perturbed covariances once per σ so that many
//! points (e.g. all patches of an image) can be evaluated cheaply.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_dim, AnalyticPrior, GaussianPrior, PriorError};
use crate::rng::GaussianStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrior {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    factors: Vec<DMatrix<f64>>,
}

/// JSON form of a mixture prior.
///
/// ```json
/// {
///   "weights": [0.5, 0.5],
///   "means": [[-1.0, 0.0], [1.0, 0.0]],
///   "covariances": [[[0.1, 0.0], [0.0, 0.1]], [[0.1, 0.0], [0.0, 0.1]]]
/// }
/// ```
///
/// Weights must sum to 1 within 1e-12; covariances must be symmetric
/// positive definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmFile {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl GmmPrior {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self, PriorError> {
        let k = weights.len();
        if k == 0 {
            return Err(PriorError::InvalidPrior("no components".into()));
        }
        if means.len() != k || covariances.len() != k {
            return Err(PriorError::InvalidPrior(format!(
                "{k} weights but {} means and {} covariances",
                means.len(),
                covariances.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(PriorError::InvalidPrior("dimension must be at least 1".into()));
        }
        let mut mats = Vec::with_capacity(k);
        for (i, (m, c)) in means.iter().zip(&covariances).enumerate() {
            if m.len() != dim {
                return Err(PriorError::InvalidPrior(format!("mean {i} has dimension {}", m.len())));
            }
            if c.len() != dim || c.iter().any(|row| row.len() != dim) {
                return Err(PriorError::InvalidPrior(format!("covariance {i} is not {dim}x{dim}")));
            }
            mats.push(DMatrix::from_fn(dim, dim, |r, q| c[r][q]));
        }
        Self::from_parts(
            weights,
            means.into_iter().map(DVector::from_vec).collect(),
            mats,
        )
    }

    /// Components with covariance `std² I`.
    pub fn isotropic(weights: Vec<f64>, means: Vec<Vec<f64>>, std: f64) -> Result<Self, PriorError> {
        let dim = means.first().map_or(0, Vec::len);
        let k = means.len();
        let cov = DMatrix::from_diagonal_element(dim, dim, std * std);
        Self::from_parts(
            weights,
            means.into_iter().map(DVector::from_vec).collect(),
            vec![cov; k],
        )
    }

    pub fn from_parts(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self, PriorError> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(PriorError::InvalidPrior("component counts differ or are zero".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(PriorError::InvalidPrior("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(PriorError::InvalidPrior(format!("weights sum to {total}, not 1")));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(PriorError::InvalidPrior("dimension must be at least 1".into()));
        }
        let mut factors = Vec::with_capacity(k);
        for (i, (m, c)) in means.iter().zip(&covariances).enumerate() {
            if m.len() != dim || c.shape() != (dim, dim) {
                return Err(PriorError::InvalidPrior(format!("component {i} has the wrong dimension")));
            }
            if m.iter().chain(c.iter()).any(|v| !v.is_finite()) {
                return Err(PriorError::InvalidPrior(format!("component {i} is not finite")));
            }
            let scale = c.amax().max(f64::MIN_POSITIVE);
            if (c - c.transpose()).amax() > 1e-12 * scale {
                return Err(PriorError::InvalidPrior(format!("covariance {i} is not symmetric")));
            }
            let chol = c.clone().cholesky().ok_or_else(|| {
                PriorError::InvalidPrior(format!("covariance {i} is not positive definite"))
            })?;
            factors.push(chol.l());
        }
        Ok(Self {
            dim,
            weights,
            means,
            covariances,
            factors,
        })
    }

    pub fn from_gaussian(g: &GaussianPrior) -> Self {
        let d = g.mean().len();
        Self::from_parts(
            vec![1.0],
            vec![DVector::from_column_slice(g.mean())],
            vec![DMatrix::from_diagonal_element(d, d, g.std() * g.std())],
        )
        .expect("a valid Gaussian is a valid one-component mixture")
    }

    pub fn from_file_struct(f: GmmFile) -> Result<Self, PriorError> {
        Self::new(f.weights, f.means, f.covariances)
    }

    pub fn to_file_struct(&self) -> GmmFile {
        GmmFile {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: self
                .covariances
                .iter()
                .map(|c| (0..self.dim).map(|r| c.row(r).iter().copied().collect()).collect())
                .collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PriorError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PriorError::InvalidPrior(format!("{}: {e}", path.display())))?;
        let f: GmmFile = serde_json::from_str(&text)
            .map_err(|e| PriorError::InvalidPrior(format!("{}: {e}", path.display())))?;
        Self::from_file_struct(f)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PriorError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_file_struct())
            .map_err(|e| PriorError::InvalidPrior(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| PriorError::InvalidPrior(format!("{}: {e}", path.display())))
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, i: usize) -> &DVector<f64> {
        &self.means[i]
    }

    pub fn covariance(&self, i: usize) -> &DMatrix<f64> {
        &self.covariances[i]
    }

    /// Factorizes `Σᵢ + σ² I` for every component.
    pub fn perturbed(&self, sigma: f64) -> Result<PerturbedGmm<'_>, PriorError> {
        let d = self.dim;
        let s2 = sigma * sigma;
        let mut precisions = Vec::with_capacity(self.n_components());
        let mut gains = Vec::with_capacity(self.n_components());
        let mut log_norm = Vec::with_capacity(self.n_components());
        for (i, cov) in self.covariances.iter().enumerate() {
            let mut c = cov.clone();
            for j in 0..d {
                c[(j, j)] += s2;
            }
            let chol = c.cholesky().ok_or_else(|| {
                PriorError::Numeric(format!("perturbed covariance {i} lost definiteness at sigma={sigma}"))
            })?;
            let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let prec = chol.inverse();
            gains.push(cov * &prec);
            precisions.push(prec);
            log_norm.push(self.weights[i].ln() - 0.5 * logdet - 0.5 * d as f64 * LN_2PI);
        }
        Ok(PerturbedGmm {
            prior: self,
            precisions,
            gains,
            log_norm,
        })
    }
}

/// A mixture at a fixed noise level, ready for repeated evaluation.
pub struct PerturbedGmm<'a> {
    prior: &'a GmmPrior,
    precisions: Vec<DMatrix<f64>>,
    gains: Vec<DMatrix<f64>>,
    log_norm: Vec<f64>,
}

struct Eval {
    resp: Vec<f64>,
    diffs: Vec<Vec<f64>>,
    whitened: Vec<Vec<f64>>,
    log_density: f64,
}

fn matvec(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let d = v.len();
    let data = m.as_slice();
    for (q, vq) in v.iter().enumerate() {
        let col = &data[q * d..(q + 1) * d];
        for (o, c) in out.iter_mut().zip(col) {
            *o += c * vq;
        }
    }
}

impl PerturbedGmm<'_> {
    fn eval(&self, x: &[f64]) -> Result<Eval, PriorError> {
        check_dim(self.prior.dim, x.len())?;
        let k = self.prior.n_components();
        let d = self.prior.dim;
        let mut diffs = Vec::with_capacity(k);
        let mut whitened = Vec::with_capacity(k);
        let mut logits = Vec::with_capacity(k);
        for i in 0..k {
            let diff: Vec<f64> = x.iter().zip(self.prior.means[i].iter()).map(|(a, m)| a - m).collect();
            let mut w = vec![0.0; d];
            matvec(&self.precisions[i], &diff, &mut w);
            let q: f64 = diff.iter().zip(&w).map(|(a, b)| a * b).sum();
            logits.push(self.log_norm[i] - 0.5 * q);
            diffs.push(diff);
            whitened.push(w);
        }
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut resp: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = resp.iter().sum();
        resp.iter_mut().for_each(|r| *r /= z);
        Ok(Eval {
            resp,
            diffs,
            whitened,
            log_density: top + z.ln(),
        })
    }

    /// Posterior component probabilities given the noisy point `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>, PriorError> {
        Ok(self.eval(x)?.resp)
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64, PriorError> {
        Ok(self.eval(x)?.log_density)
    }

    /// `−Σ rᵢ (Σᵢ + σ² I)⁻¹ (x − μᵢ)`
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>, PriorError> {
        let e = self.eval(x)?;
        let mut out = vec![0.0; x.len()];
        for (r, w) in e.resp.iter().zip(&e.whitened) {
            for (o, wi) in out.iter_mut().zip(w) {
                *o -= r * wi;
            }
        }
        Ok(out)
    }

    /// `Σ rᵢ (μᵢ + Σᵢ (Σᵢ + σ² I)⁻¹ (x − μᵢ))`
    pub fn mmse_denoise(&self, x: &[f64]) -> Result<Vec<f64>, PriorError> {
        let e = self.eval(x)?;
        let d = x.len();
        let mut out = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        for (i, (r, diff)) in e.resp.iter().zip(&e.diffs).enumerate() {
            matvec(&self.gains[i], diff, &mut tmp);
            for ((o, m), t) in out.iter_mut().zip(self.prior.means[i].iter()).zip(&tmp) {
                *o += r * (m + t);
            }
        }
        Ok(out)
    }
}

/// Exact score of `Σ πᵢ N(μᵢ, Σᵢ + σ² I)` at `x`.
pub fn gmm_score(prior: &GmmPrior, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
    prior.perturbed(sigma)?.score(x)
}

/// Posterior mean `E[x₀ | x₀ + w = x]`, `w ~ N(0, σ² I)`.
pub fn gmm_mmse_denoise(prior: &GmmPrior, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
    if !(sigma > 0.0) {
        return Err(PriorError::Condition(format!("sigma must be positive, got {sigma}")));
    }
    prior.perturbed(sigma)?.mmse_denoise(x)
}

impl AnalyticPrior for GmmPrior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        gmm_score(self, x, sigma)
    }

    fn mmse_denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        gmm_mmse_denoise(self, x, sigma)
    }

    fn log_density(&self, x: &[f64], sigma: f64) -> Result<f64, PriorError> {
        self.perturbed(sigma)?.log_density(x)
    }

    fn sample(&self, rng: &mut GaussianStream) -> Vec<f64> {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut i = self.n_components() - 1;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                i = j;
                break;
            }
        }
        let z = DVector::from_vec(rng.normal_vec(self.dim));
        (&self.means[i] + &self.factors[i] * z).iter().copied().collect()
    }

    fn score_many(&self, points: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        let p = self.perturbed(sigma)?;
        let mut out = Vec::with_capacity(points.len());
        for x in points.chunks(self.dim) {
            out.extend(p.score(x)?);
        }
        Ok(out)
    }

    fn mmse_many(&self, points: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        let p = self.perturbed(sigma)?;
        let mut out = Vec::with_capacity(points.len());
        for x in points.chunks(self.dim) {
            out.extend(p.mmse_denoise(x)?);
        }
        Ok(out)
    }
}
