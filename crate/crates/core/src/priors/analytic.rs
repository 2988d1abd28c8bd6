use std::sync::Arc;

use super::{check_dim, Convention, PriorError, ScoreFunction};
use crate::imaging::ImageTensor;
use crate::rng::GaussianStream;
use crate::schedule::NoiseSchedule;

/// A prior with closed-form noise-perturbed score and MMSE denoiser.
///
/// Points are flat vectors of length [`dim`](AnalyticPrior::dim); the
/// `_many` variants take `n·dim` values laid out point after point.
pub trait AnalyticPrior: Send + Sync + std::fmt::Debug {
    fn dim(&self) -> usize;

    /// `∇log p_σ(x)`
    fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError>;

    /// `E[x₀ | x₀ + σ w = x]`
    fn mmse_denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError>;

    fn log_density(&self, x: &[f64], sigma: f64) -> Result<f64, PriorError>;

    fn sample(&self, rng: &mut GaussianStream) -> Vec<f64>;

    fn score_many(&self, points: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        let mut out = Vec::with_capacity(points.len());
        for x in points.chunks(self.dim()) {
            out.extend(self.score(x, sigma)?);
        }
        Ok(out)
    }

    fn mmse_many(&self, points: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        let mut out = Vec::with_capacity(points.len());
        for x in points.chunks(self.dim()) {
            out.extend(self.mmse_denoise(x, sigma)?);
        }
        Ok(out)
    }
}

/// Noise-level-direct score backed by an analytic prior. The input tensor is
/// flattened in storage order and must have `prior.dim()` values.
#[derive(Debug, Clone)]
pub struct AnalyticScore {
    prior: Arc<dyn AnalyticPrior>,
}

impl AnalyticScore {
    pub fn new(prior: Arc<dyn AnalyticPrior>) -> Self {
        Self { prior }
    }

    pub fn prior(&self) -> &Arc<dyn AnalyticPrior> {
        &self.prior
    }
}

impl ScoreFunction for AnalyticScore {
    fn convention(&self) -> Convention {
        Convention::NoiseLevelDirect
    }

    fn schedule(&self) -> Option<&NoiseSchedule> {
        None
    }

    fn score(&self, x: &ImageTensor, sigma: f64) -> Result<ImageTensor, PriorError> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(PriorError::Condition(format!("invalid noise level {sigma}")));
        }
        check_dim(self.prior.dim(), x.len())?;
        Ok(x.with_data(self.prior.score(x.as_slice(), sigma)?)?)
    }

    fn score_batch(&self, xs: &[ImageTensor], sigma: f64) -> Result<Vec<ImageTensor>, PriorError> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(PriorError::Condition(format!("invalid noise level {sigma}")));
        }
        let d = self.prior.dim();
        let mut flat = Vec::with_capacity(xs.len() * d);
        for x in xs {
            check_dim(d, x.len())?;
            flat.extend_from_slice(x.as_slice());
        }
        let out = self.prior.score_many(&flat, sigma)?;
        xs.iter()
            .zip(out.chunks(d))
            .map(|(x, s)| Ok(x.with_data(s.to_vec())?))
            .collect()
    }
}
