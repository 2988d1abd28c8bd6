//! Turning score models into denoisers.
//!
//! Tweedie's formula gives the MMSE denoiser of `x = x₀ + σ w` from the score
//! of the noisy marginal. For a model of the scaled variable `c·(x₀ + σ w)`
//! it reads
//!
//! ```text
//! D_σ(x) = x + c·σ²·∇log p_{cσ}(c·x)
//! ```
//!
//! VE models use `c = 1` and the native level `σ_t`; VP models use
//! `c = √ᾱ` and `σ = √((1 − ᾱ)/ᾱ)`, so `c·σ² = (1 − ᾱ)/√ᾱ`. The
//! [`ParamMatcher`] picks `(c, t)` for an arbitrary requested σ.

mod denoiser;
mod matching;

pub use self::denoiser::{
    adapt_ve, adapt_vp, denoiser_for, AdaptedDenoiser, Denoiser, DomainRescaledDenoiser, IdentityDenoiser,
};
pub use self::matching::{param_matching, ParamMatch, ParamMatcher, RangePolicy};

use crate::imaging::{ImageTensor, ImagingError};
use crate::priors::PriorError;
use crate::schedule::ScheduleError;

#[derive(Debug, thiserror::Error)]
pub enum AdaptError {
    #[error("noise level {sigma} outside the achievable range [{min}, {max}]")]
    Range { sigma: f64, min: f64, max: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("non-finite score at index {index} (sigma={sigma}, c={c})")]
    NonFinite { index: usize, sigma: f64, c: f64 },
    #[error("convention mismatch: {0}")]
    Convention(String),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// `x + c·σ²·s(c·x)`, where `scaled_score` evaluates the score of the scaled
/// noisy variable. Returns `x` unchanged when `σ = 0`.
pub fn tweedie_denoise<F>(x: &ImageTensor, c: f64, sigma: f64, scaled_score: F) -> Result<ImageTensor, AdaptError>
where
    F: FnOnce(&ImageTensor) -> Result<ImageTensor, PriorError>,
{
    if !(c.is_finite() && c > 0.0) {
        return Err(AdaptError::Parameter(format!("scale c must be positive, got {c}")));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(AdaptError::Parameter(format!("sigma must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let s = scaled_score(&x.scale(c))?;
    x.check_same_shape(&s)?;
    if let Some(index) = s.first_non_finite() {
        return Err(AdaptError::NonFinite { index, sigma, c });
    }
    let mut out = x.clone();
    out.axpy(c * sigma * sigma, &s)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Shape;

    fn scalar(v: f64) -> ImageTensor {
        ImageTensor::new(Shape::new(1, 1, 1), vec![v]).unwrap()
    }

    // score of c·(x₀ + σw) for x₀ ~ N(0, 1): −z/(c²(1 + σ²))
    fn scaled_gaussian(c: f64, sigma: f64) -> impl FnOnce(&ImageTensor) -> Result<ImageTensor, PriorError> {
        move |z| Ok(z.scale(-1.0 / (c * c * (1.0 + sigma * sigma))))
    }

    #[test]
    fn zero_sigma_is_identity() {
        let x = scalar(0.37);
        let out = tweedie_denoise(&x, 0.8, 0.0, |_| panic!("score must not be called")).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn gaussian_closed_form_and_c_invariance() {
        let x = scalar(2.0);
        assert_eq!(tweedie_denoise(&x, 1.0, 1.0, scaled_gaussian(1.0, 1.0)).unwrap().as_slice(), &[1.0]);
        assert_eq!(tweedie_denoise(&x, 0.5, 1.0, scaled_gaussian(0.5, 1.0)).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn rejects_bad_parameters_and_non_finite_scores() {
        let x = scalar(1.0);
        assert!(tweedie_denoise(&x, 0.0, 1.0, scaled_gaussian(1.0, 1.0)).is_err());
        assert!(tweedie_denoise(&x, 1.0, -1.0, scaled_gaussian(1.0, 1.0)).is_err());
        let bad = |z: &ImageTensor| -> Result<ImageTensor, PriorError> {
            let mut s = z.clone();
            s.as_mut_slice()[0] = f64::NAN;
            Ok(s)
        };
        assert!(matches!(
            tweedie_denoise(&x, 1.0, 0.5, bad),
            Err(AdaptError::NonFinite { index: 0, .. })
        ));
    }
}
