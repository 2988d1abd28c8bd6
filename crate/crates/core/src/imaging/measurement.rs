use super::{ImageTensor, ImagingError, LinearOperator};
use crate::rng::GaussianStream;

/// Noisy observation `y = A x + e`, `e ~ N(0, noise_sigma² I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub y: ImageTensor,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Synthesizes a measurement. The noise is drawn from
/// [`GaussianStream::new(seed)`](GaussianStream) in pixel order, so equal
/// seeds give bit-identical `y`. With `noise_sigma == 0` no noise is added.
pub fn generate_measurement(
    x: &ImageTensor,
    op: &LinearOperator,
    noise_sigma: f64,
    seed: u64,
) -> Result<Measurement, ImagingError> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(ImagingError::InvalidParameter(format!(
            "noise_sigma must be finite and nonnegative, got {noise_sigma}"
        )));
    }
    let mut y = op.forward(x)?;
    if noise_sigma > 0.0 {
        let mut rng = GaussianStream::new(seed);
        for v in y.as_mut_slice() {
            *v += noise_sigma * rng.normal();
        }
    }
    Ok(Measurement {
        y,
        noise_sigma,
        seed,
    })
}
