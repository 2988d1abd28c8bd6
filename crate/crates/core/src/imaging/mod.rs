//! Image containers, linear measurement operators and measurement synthesis.
//!
//! Blur operators use periodic boundaries so that `AᵀA` is diagonal in the
//! 2-D DFT basis and the quadratic prox has a closed form.

mod image;
mod io;
mod kernel;
mod measurement;
mod operator;

pub use self::image::{ImageTensor, Shape};
pub use self::io::{load_image, save_image, save_png16};
pub use self::kernel::{convolve_periodic, BlurKernel};
pub use self::measurement::{generate_measurement, Measurement};
pub use self::operator::{LinearOperator, OperatorKind};


#[derive(Debug, thiserror::Error)]
pub enum ImagingError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: Shape, found: Shape },
    #[error("invalid image shape {0}")]
    InvalidShape(Shape),
    #[error("shape {shape} needs {expected} values, found {found}")]
    DataLength {
        shape: Shape,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("kernel {kh}x{kw} does not fit in image {shape}")]
    KernelTooLarge { kh: usize, kw: usize, shape: Shape },
    #[error("invalid kernel: {0}")]
    Kernel(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Image { path: String, message: String },
}
