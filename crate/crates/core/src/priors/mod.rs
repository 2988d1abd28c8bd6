//! Priors and the noise-conditional score contract.
//!
//! [`ScoreFunction`] is the one interface the adaptation layer consumes. Its
//! [`Convention`] says how the condition argument is read:
//!
//! * `NoiseLevelDirect`: the condition is the noise level σ itself and the
//!   output is `∇log p_σ(x)`.
//! * `Ve`: the condition is a time index `t ∈ {1..T}` of a VE schedule.
//! * `Vp`: the condition is a real time `t ∈ [0, T]` of a VP schedule and the
//!   input is the scaled noisy variable `√ᾱ_t x₀ + √(1 − ᾱ_t) ε`.

mod analytic;
mod emulator;
mod gaussian;
mod gmm;
mod patch;
pub mod remote;

use serde::{Deserialize, Serialize};

pub use self::analytic::{AnalyticPrior, AnalyticScore};
pub use self::emulator::{emulate_ve_network, emulate_vp_network, VeEmulator, VpEmulator};
pub use self::gaussian::{gaussian_mmse_denoise, gaussian_score, GaussianPrior};
pub use self::gmm::{gmm_mmse_denoise, gmm_score, GmmFile, GmmPrior, PerturbedGmm};
pub use self::patch::{PatchGeometry, PatchScore};

use crate::imaging::{ImageTensor, ImagingError};
use crate::schedule::{NoiseSchedule, ScheduleError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Convention {
    #[serde(rename = "VE")]
    Ve,
    #[serde(rename = "VP")]
    Vp,
    #[serde(rename = "direct")]
    NoiseLevelDirect,
}

impl std::fmt::Display for Convention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Convention::Ve => "VE",
            Convention::Vp => "VP",
            Convention::NoiseLevelDirect => "direct",
        })
    }
}

/// Value range the score model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ValueDomain {
    #[default]
    #[serde(rename = "[0,1]")]
    Unit,
    #[serde(rename = "[-1,1]")]
    Symmetric,
}

#[derive(Debug, thiserror::Error)]
pub enum PriorError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("condition error: {0}")]
    Condition(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("convention mismatch: {0}")]
    Convention(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<(), PriorError> {
    if expected != found {
        return Err(PriorError::Dimension { expected, found });
    }
    Ok(())
}

/// A noise-conditional score model.
pub trait ScoreFunction: Send + Sync {
    fn convention(&self) -> Convention;

    /// Schedule for the VE and VP conventions.
    fn schedule(&self) -> Option<&NoiseSchedule>;

    fn input_domain(&self) -> ValueDomain {
        ValueDomain::Unit
    }

    /// Score at `x` for condition `cond` (σ or t, see [`Convention`]). The
    /// output has the shape of `x`.
    fn score(&self, x: &ImageTensor, cond: f64) -> Result<ImageTensor, PriorError>;

    /// Scores of several inputs sharing one condition.
    fn score_batch(&self, xs: &[ImageTensor], cond: f64) -> Result<Vec<ImageTensor>, PriorError> {
        xs.iter().map(|x| self.score(x, cond)).collect()
    }
}

impl<S: ScoreFunction + ?Sized> ScoreFunction for std::sync::Arc<S> {
    fn convention(&self) -> Convention {
        (**self).convention()
    }
    fn schedule(&self) -> Option<&NoiseSchedule> {
        (**self).schedule()
    }
    fn input_domain(&self) -> ValueDomain {
        (**self).input_domain()
    }
    fn score(&self, x: &ImageTensor, cond: f64) -> Result<ImageTensor, PriorError> {
        (**self).score(x, cond)
    }
    fn score_batch(&self, xs: &[ImageTensor], cond: f64) -> Result<Vec<ImageTensor>, PriorError> {
        (**self).score_batch(xs, cond)
    }
}
