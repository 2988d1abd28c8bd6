use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{BlurKernel, ImageTensor, ImagingError, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Identity,
    CirculantBlur,
    Mask,
}

/// Linear measurement operator `A` acting on images of a fixed shape.
///
/// All kinds here are diagonalizable (the circulant blur by the 2-D DFT),
/// so `(I + γAᵀA)⁻¹` has a closed form; see [`LinearOperator::solve_normal`].
/// Immutable after construction and shareable across threads.
#[derive(Clone)]
pub struct LinearOperator {
    shape: Shape,
    inner: Inner,
}

#[derive(Clone)]
enum Inner {
    Identity,
    Circulant(Arc<Circulant>),
    Mask(Vec<f64>),
}

struct Circulant {
    kernel: BlurKernel,
    spectrum: Vec<Complex64>,
    fft2: Fft2,
}

impl fmt::Debug for LinearOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("LinearOperator");
        d.field("kind", &self.kind()).field("shape", &self.shape);
        if let Inner::Circulant(c) = &self.inner {
            d.field("kernel", &(c.kernel.kh(), c.kernel.kw()));
        }
        d.finish()
    }
}

impl LinearOperator {
    pub fn identity(shape: Shape) -> Self {
        Self {
            shape,
            inner: Inner::Identity,
        }
    }

    /// Periodic convolution with `kernel` on images of `shape`. The kernel is
    /// used as given; normalize it beforehand if required.
    pub fn circulant_blur(shape: Shape, kernel: BlurKernel) -> Result<Self, ImagingError> {
        if kernel.kh() > shape.height || kernel.kw() > shape.width {
            return Err(ImagingError::KernelTooLarge {
                kh: kernel.kh(),
                kw: kernel.kw(),
                shape,
            });
        }
        let fft2 = Fft2::new(shape.height, shape.width);
        // point-spread function with its center wrapped to (0, 0)
        let mut psf = vec![Complex64::new(0.0, 0.0); shape.plane()];
        let (ch, cw) = ((kernel.kh() / 2) as isize, (kernel.kw() / 2) as isize);
        for a in 0..kernel.kh() {
            let r = (a as isize - ch).rem_euclid(shape.height as isize) as usize;
            for b in 0..kernel.kw() {
                let q = (b as isize - cw).rem_euclid(shape.width as isize) as usize;
                psf[r * shape.width + q].re += kernel.weight(a, b);
            }
        }
        fft2.forward(&mut psf);
        Ok(Self {
            shape,
            inner: Inner::Circulant(Arc::new(Circulant {
                kernel,
                spectrum: psf,
                fft2,
            })),
        })
    }

    /// Per-pixel mask (typically 0/1). A single-plane mask is broadcast over
    /// channels.
    pub fn mask(shape: Shape, mask: Vec<f64>) -> Result<Self, ImagingError> {
        let mask = if mask.len() == shape.plane() && shape.channels > 1 {
            mask.iter()
                .copied()
                .cycle()
                .take(shape.len())
                .collect::<Vec<_>>()
        } else {
            mask
        };
        if mask.len() != shape.len() {
            return Err(ImagingError::DataLength {
                shape,
                expected: shape.len(),
                found: mask.len(),
            });
        }
        if mask.iter().any(|m| !m.is_finite()) {
            return Err(ImagingError::NonFinite { index: 0 });
        }
        Ok(Self {
            shape,
            inner: Inner::Mask(mask),
        })
    }

    pub fn kind(&self) -> OperatorKind {
        match self.inner {
            Inner::Identity => OperatorKind::Identity,
            Inner::Circulant(_) => OperatorKind::CirculantBlur,
            Inner::Mask(_) => OperatorKind::Mask,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn kernel(&self) -> Option<&BlurKernel> {
        match &self.inner {
            Inner::Circulant(c) => Some(&c.kernel),
            _ => None,
        }
    }

    /// Cached DFT of the embedded point-spread function (circulant case).
    pub fn transfer_spectrum(&self) -> Option<&[Complex64]> {
        match &self.inner {
            Inner::Circulant(c) => Some(&c.spectrum),
            _ => None,
        }
    }

    fn check(&self, x: &ImageTensor) -> Result<(), ImagingError> {
        if x.shape() != self.shape {
            return Err(ImagingError::DimensionMismatch {
                expected: self.shape,
                found: x.shape(),
            });
        }
        Ok(())
    }

    /// `A x`
    pub fn forward(&self, x: &ImageTensor) -> Result<ImageTensor, ImagingError> {
        self.check(x)?;
        Ok(match &self.inner {
            Inner::Identity => x.clone(),
            Inner::Circulant(c) => self.spectral(x, |k| c.spectrum[k], c),
            Inner::Mask(m) => ImageTensor::from_vec_unchecked(
                self.shape,
                x.as_slice().iter().zip(m).map(|(a, b)| a * b).collect(),
            ),
        })
    }

    /// `Aᵀ v`; for the circulant blur this multiplies by the conjugate
    /// spectrum, i.e. correlates with the kernel.
    pub fn adjoint(&self, v: &ImageTensor) -> Result<ImageTensor, ImagingError> {
        self.check(v)?;
        Ok(match &self.inner {
            Inner::Identity => v.clone(),
            Inner::Circulant(c) => self.spectral(v, |k| c.spectrum[k].conj(), c),
            Inner::Mask(_) => self.forward(v)?,
        })
    }

    /// `AᵀA x`
    pub fn normal(&self, x: &ImageTensor) -> Result<ImageTensor, ImagingError> {
        self.check(x)?;
        Ok(match &self.inner {
            Inner::Identity => x.clone(),
            Inner::Circulant(c) => self.spectral(x, |k| Complex64::new(c.spectrum[k].norm_sqr(), 0.0), c),
            Inner::Mask(m) => ImageTensor::from_vec_unchecked(
                self.shape,
                x.as_slice().iter().zip(m).map(|(a, b)| a * b * b).collect(),
            ),
        })
    }

    /// Solves `(I + γAᵀA) x = rhs` in closed form.
    pub fn solve_normal(&self, rhs: &ImageTensor, gamma: f64) -> Result<ImageTensor, ImagingError> {
        self.check(rhs)?;
        Ok(match &self.inner {
            Inner::Identity => rhs.scale(1.0 / (1.0 + gamma)),
            Inner::Circulant(c) => self.spectral(
                rhs,
                |k| Complex64::new(1.0 / (1.0 + gamma * c.spectrum[k].norm_sqr()), 0.0),
                c,
            ),
            Inner::Mask(m) => ImageTensor::from_vec_unchecked(
                self.shape,
                rhs.as_slice()
                    .iter()
                    .zip(m)
                    .map(|(r, w)| r / (1.0 + gamma * w * w))
                    .collect(),
            ),
        })
    }

    /// Per channel: `IDFT(filter ⊙ DFT(x))`, real part.
    fn spectral(
        &self,
        x: &ImageTensor,
        filter: impl Fn(usize) -> Complex64,
        c: &Circulant,
    ) -> ImageTensor {
        let plane = self.shape.plane();
        let mut out = Vec::with_capacity(self.shape.len());
        let mut buf = vec![Complex64::new(0.0, 0.0); plane];
        for ch in 0..self.shape.channels {
            for (b, &v) in buf.iter_mut().zip(x.channel(ch)) {
                *b = Complex64::new(v, 0.0);
            }
            c.fft2.forward(&mut buf);
            for (k, b) in buf.iter_mut().enumerate() {
                *b *= filter(k);
            }
            c.fft2.inverse(&mut buf);
            out.extend(buf.iter().map(|b| b.re));
        }
        ImageTensor::from_vec_unchecked(self.shape, out)
    }
}

/// Row-column 2-D FFT on an H×W row-major plane. The inverse is normalized
/// by `1/(HW)`.
#[derive(Clone)]
struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
        let k = 1.0 / (self.h * self.w) as f64;
        for v in data.iter_mut() {
            *v *= k;
        }
    }

    fn run(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        rows.process(data);
        let mut col = vec![Complex64::new(0.0, 0.0); self.h];
        for q in 0..self.w {
            for r in 0..self.h {
                col[r] = data[r * self.w + q];
            }
            cols.process(&mut col);
            for r in 0..self.h {
                data[r * self.w + q] = col[r];
            }
        }
    }
}
