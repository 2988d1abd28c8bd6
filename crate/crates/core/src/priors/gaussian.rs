use super::{check_dim, AnalyticPrior, PriorError};
use crate::rng::GaussianStream;

/// Isotropic Gaussian `N(μ, ρ² I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mean: Vec<f64>,
    std: f64,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, std: f64) -> Result<Self, PriorError> {
        if mean.is_empty() {
            return Err(PriorError::InvalidPrior("dimension must be at least 1".into()));
        }
        if !(std.is_finite() && std > 0.0) {
            return Err(PriorError::InvalidPrior(format!("std must be positive, got {std}")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(PriorError::InvalidPrior("mean must be finite".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }
}

/// Score of `N(μ, (ρ² + σ²) I)`: `(μ − x)/(ρ² + σ²)`.
pub fn gaussian_score(prior: &GaussianPrior, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
    check_dim(prior.mean.len(), x.len())?;
    let v = prior.std * prior.std + sigma * sigma;
    Ok(prior.mean.iter().zip(x).map(|(m, xi)| (m - xi) / v).collect())
}

/// Posterior mean `(ρ² x + σ² μ)/(ρ² + σ²)`.
pub fn gaussian_mmse_denoise(
    prior: &GaussianPrior,
    x: &[f64],
    sigma: f64,
) -> Result<Vec<f64>, PriorError> {
    check_dim(prior.mean.len(), x.len())?;
    let (r2, s2) = (prior.std * prior.std, sigma * sigma);
    Ok(prior
        .mean
        .iter()
        .zip(x)
        .map(|(m, xi)| (r2 * xi + s2 * m) / (r2 + s2))
        .collect())
}

impl AnalyticPrior for GaussianPrior {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        gaussian_score(self, x, sigma)
    }

    fn mmse_denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        gaussian_mmse_denoise(self, x, sigma)
    }

    fn log_density(&self, x: &[f64], sigma: f64) -> Result<f64, PriorError> {
        check_dim(self.mean.len(), x.len())?;
        let v = self.std * self.std + sigma * sigma;
        let q: f64 = self.mean.iter().zip(x).map(|(m, xi)| (xi - m).powi(2)).sum();
        let d = self.mean.len() as f64;
        Ok(-0.5 * q / v - 0.5 * d * (2.0 * std::f64::consts::PI * v).ln())
    }

    fn sample(&self, rng: &mut GaussianStream) -> Vec<f64> {
        self.mean.iter().map(|m| m + self.std * rng.normal()).collect()
    }
}
