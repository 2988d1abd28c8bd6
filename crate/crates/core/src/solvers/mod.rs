//! Plug-and-play solvers for `min_x ½‖y − Ax‖² + R(x)` with a denoiser in
//! place of the regularizer.
//!
//! | method     | iteration                                                          | estimate |
//! |------------|--------------------------------------------------------------------|----------|
//! | `pnp-admm` | `x ← prox_γg(z − s)`, `z ← D_σ(x + s)`, `s ← s + x − z`             | `z_K`    |
//! | `red`      | `x ← s − γ∇g(s)`, `z ← D_σ(x)`, `s ← x − γτ(s − z)`                 | `x_K`    |
//! | `dpir`     | `x ← prox_{γ_k g}(z)`, `z ← D_{σ_k}(x)`, `γ_k = σ_k²/λ`             | `z_K`    |
//! | `diffpir`  | `x̂₀ ← D_{σ_k}(x)`, `x̂ ← prox_{γ_k g}(x̂₀)`, re-noise to `σ_{k+1}` | `x̂` last |
//!
//! DiffPIR uses `γ_k = σ_k²/(λσ_e²)` and re-noises with
//! `x ← x̂ + σ_{k+1}(√(1 − ζ²)·ε̂ + ζ·ε)`, where `ε̂ = (x − x̂)/σ_k` is the
//! noise direction of the current iterate and `ε` is fresh. The sampler
//! starts from `x = x₀ + ζσ₁ε` so `ζ = 0` runs do not depend on the seed.

mod algorithms;
mod config;
mod data;
mod trace;

pub use self::algorithms::{diffpir_sample, dpir_hqs, pnp_admm, red, solve};
pub use self::config::{
    make_log_sigma_schedule, Fidelity, GammaRule, Init, Method, Preset, RedVariant, SigmaSchedule, SolverConfig,
};
pub use self::data::{CgOptions, ProxMethod, QuadraticDataTerm};
pub use self::trace::{read_trace_csv, write_trace_csv, TraceRow};

use crate::adaptation::AdaptError;
use crate::imaging::{ImageTensor, ImagingError};

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("denoiser failed at iteration {k}: {source}")]
    Denoiser {
        k: usize,
        #[source]
        source: AdaptError,
    },
    #[error("non-finite {what} at iteration {k}, index {index}")]
    NonFinite { k: usize, what: &'static str, index: usize },
    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    Cg { iterations: usize, residual: f64 },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("trace i/o: {0}")]
    Trace(String),
}

/// Iterates after the last completed iteration.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub method: Method,
    pub x: ImageTensor,
    pub z: ImageTensor,
    pub s: ImageTensor,
    /// Completed iterations.
    pub k: usize,
    pub trace: Vec<TraceRow>,
}

impl SolverState {
    /// The reconstruction: `z` for ADMM and HQS, `x` for RED and DiffPIR.
    pub fn estimate(&self) -> &ImageTensor {
        match self.method {
            Method::PnpAdmm | Method::Dpir => &self.z,
            Method::Red | Method::Diffpir => &self.x,
        }
    }
}
