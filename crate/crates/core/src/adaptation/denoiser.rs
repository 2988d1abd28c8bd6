use std::sync::Arc;

use super::{tweedie_denoise, AdaptError, ParamMatch, ParamMatcher, RangePolicy};
use crate::imaging::ImageTensor;
use crate::priors::{Convention, ScoreFunction, ValueDomain};
use crate::schedule::ScheduleKind;

/// A Gaussian denoiser `D_σ` for images in `[0, 1]`.
pub trait Denoiser: Send + Sync {
    /// Conditioning used for level `sigma`.
    fn resolve(&self, sigma: f64) -> Result<ParamMatch, AdaptError>;

    /// Denoises with previously resolved parameters.
    fn denoise_at(&self, x: &ImageTensor, m: &ParamMatch) -> Result<ImageTensor, AdaptError>;

    fn denoise(&self, x: &ImageTensor, sigma: f64) -> Result<ImageTensor, AdaptError> {
        let m = self.resolve(sigma)?;
        self.denoise_at(x, &m)
    }

    /// Convention of the underlying score model, if any.
    fn convention(&self) -> Option<Convention> {
        None
    }
}

/// Tweedie denoiser built from a score model.
#[derive(Clone)]
pub struct AdaptedDenoiser {
    score: Arc<dyn ScoreFunction>,
    matcher: Option<ParamMatcher>,
}

impl AdaptedDenoiser {
    /// Wraps any convention. VE and VP models must carry a schedule of the
    /// same kind; `t_prime` defaults to `10·T`.
    pub fn new(score: Arc<dyn ScoreFunction>, t_prime: Option<usize>, policy: RangePolicy) -> Result<Self, AdaptError> {
        let convention = score.convention();
        let matcher = match convention {
            Convention::NoiseLevelDirect => None,
            Convention::Ve | Convention::Vp => {
                let schedule = score
                    .schedule()
                    .ok_or_else(|| AdaptError::Convention(format!("{convention} model without a schedule")))?;
                let expected = if convention == Convention::Ve {
                    ScheduleKind::Ve
                } else {
                    ScheduleKind::Vp
                };
                if schedule.kind() != expected {
                    return Err(AdaptError::Convention(format!(
                        "{convention} model with a {:?} schedule",
                        schedule.kind()
                    )));
                }
                Some(ParamMatcher::new(schedule.clone(), t_prime, policy)?)
            }
        };
        Ok(Self { score, matcher })
    }

    pub fn convention(&self) -> Convention {
        self.score.convention()
    }

    pub fn matcher(&self) -> Option<&ParamMatcher> {
        self.matcher.as_ref()
    }

    pub fn score(&self) -> &Arc<dyn ScoreFunction> {
        &self.score
    }
}

fn require(score: &dyn ScoreFunction, want: Convention) -> Result<(), AdaptError> {
    if score.convention() != want {
        return Err(AdaptError::Convention(format!(
            "expected a {want} score, got {}",
            score.convention()
        )));
    }
    Ok(())
}

/// `D_σ(x) = x + σ_t²·s(x, t)` with `t` from parameter matching.
pub fn adapt_ve(score: Arc<dyn ScoreFunction>, policy: RangePolicy) -> Result<AdaptedDenoiser, AdaptError> {
    require(score.as_ref(), Convention::Ve)?;
    AdaptedDenoiser::new(score, None, policy)
}

/// `D_σ(x) = x + ((1 − ᾱ)/√ᾱ)·s(√ᾱ·x, t)` with `(ᾱ, t)` from parameter
/// matching.
pub fn adapt_vp(score: Arc<dyn ScoreFunction>, policy: RangePolicy) -> Result<AdaptedDenoiser, AdaptError> {
    require(score.as_ref(), Convention::Vp)?;
    AdaptedDenoiser::new(score, None, policy)
}

impl Denoiser for AdaptedDenoiser {
    fn resolve(&self, sigma: f64) -> Result<ParamMatch, AdaptError> {
        match &self.matcher {
            Some(m) => m.match_sigma(sigma),
            None if sigma.is_finite() && sigma >= 0.0 => Ok(ParamMatch::direct(sigma)),
            None => Err(AdaptError::Parameter(format!("invalid noise level {sigma}"))),
        }
    }

    fn denoise_at(&self, x: &ImageTensor, m: &ParamMatch) -> Result<ImageTensor, AdaptError> {
        tweedie_denoise(x, m.c, m.sigma_achieved, |z| self.score.score(z, m.t_cond))
    }

    fn convention(&self) -> Option<Convention> {
        Some(self.score.convention())
    }
}

/// `D_σ(x) = x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn resolve(&self, sigma: f64) -> Result<ParamMatch, AdaptError> {
        let mut m = ParamMatch::direct(sigma);
        m.sigma_achieved = 0.0;
        Ok(m)
    }

    fn denoise_at(&self, x: &ImageTensor, _: &ParamMatch) -> Result<ImageTensor, AdaptError> {
        Ok(x.clone())
    }
}

/// Runs a denoiser trained on `[−1, 1]` data on `[0, 1]` images:
/// `D(x; σ) = (D_net(2x − 1; 2σ) + 1)/2`. Noise levels double with the
/// affine map, so the inner model is matched at `2σ`.
#[derive(Clone)]
pub struct DomainRescaledDenoiser {
    inner: Arc<dyn Denoiser>,
}

impl DomainRescaledDenoiser {
    pub fn new(inner: Arc<dyn Denoiser>) -> Self {
        Self { inner }
    }
}

impl Denoiser for DomainRescaledDenoiser {
    fn resolve(&self, sigma: f64) -> Result<ParamMatch, AdaptError> {
        self.inner.resolve(2.0 * sigma)
    }

    fn denoise_at(&self, x: &ImageTensor, m: &ParamMatch) -> Result<ImageTensor, AdaptError> {
        let y = self.inner.denoise_at(&x.map(|v| 2.0 * v - 1.0), m)?;
        Ok(y.map(|v| 0.5 * (v + 1.0)))
    }

    fn convention(&self) -> Option<Convention> {
        self.inner.convention()
    }
}

/// Adapted denoiser for `score`, wrapped in a domain rescale when the model
/// expects `[−1, 1]` inputs.
pub fn denoiser_for(
    score: Arc<dyn ScoreFunction>,
    t_prime: Option<usize>,
    policy: RangePolicy,
) -> Result<Arc<dyn Denoiser>, AdaptError> {
    let domain = score.input_domain();
    let d: Arc<dyn Denoiser> = Arc::new(AdaptedDenoiser::new(score, t_prime, policy)?);
    Ok(match domain {
        ValueDomain::Unit => d,
        ValueDomain::Symmetric => Arc::new(DomainRescaledDenoiser::new(d)),
    })
}
