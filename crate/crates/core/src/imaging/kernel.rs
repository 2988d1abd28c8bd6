use std::path::Path;

use super::{ImageTensor, ImagingError};

/// Convolution kernel with odd dimensions, centered at `(kh/2, kw/2)`.
///
/// The raw weight sum is recorded at construction. Normalization to unit
/// sum only happens through [`BlurKernel::normalized`] or
/// [`BlurKernel::load`], which logs when the raw sum is off by more than
/// `1e-6`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    kh: usize,
    kw: usize,
    weights: Vec<f64>,
    raw_sum: f64,
}

const NORMALIZATION_WARN_TOL: f64 = 1e-6;

impl BlurKernel {
    pub fn new(kh: usize, kw: usize, weights: Vec<f64>) -> Result<Self, ImagingError> {
        if kh == 0 || kw == 0 || kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(ImagingError::Kernel(format!(
                "kernel dimensions must be odd and positive, got {kh}x{kw}"
            )));
        }
        if weights.len() != kh * kw {
            return Err(ImagingError::Kernel(format!(
                "expected {} weights for a {kh}x{kw} kernel, found {}",
                kh * kw,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ImagingError::Kernel("kernel weights must be finite".into()));
        }
        let raw_sum = weights.iter().sum();
        Ok(Self {
            kh,
            kw,
            weights,
            raw_sum,
        })
    }

    /// 1×1 kernel with weight 1.
    pub fn delta() -> Self {
        Self::new(1, 1, vec![1.0]).expect("valid delta kernel")
    }

    /// `size`×`size` uniform kernel with weights `1/size²`.
    pub fn boxcar(size: usize) -> Result<Self, ImagingError> {
        let w = 1.0 / (size * size) as f64;
        Self::new(size, size, vec![w; size * size])
    }

    /// Isotropic Gaussian kernel normalized to unit sum.
    pub fn gaussian(size: usize, std: f64) -> Result<Self, ImagingError> {
        if std <= 0.0 {
            return Err(ImagingError::Kernel(format!("gaussian std must be positive, got {std}")));
        }
        let c = (size / 2) as f64;
        let mut w = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let (di, dj) = (i as f64 - c, j as f64 - c);
                w.push((-(di * di + dj * dj) / (2.0 * std * std)).exp());
            }
        }
        Ok(Self::new(size, size, w)?.normalized())
    }

    /// Linear motion blur of `length` pixels at `angle_deg`, rasterized by
    /// supersampling the segment. Unit sum.
    pub fn motion(size: usize, length: f64, angle_deg: f64) -> Result<Self, ImagingError> {
        let mut k = Self::new(size, size, vec![0.0; size * size])?;
        let c = (size / 2) as f64;
        let (s, co) = angle_deg.to_radians().sin_cos();
        let samples = 64 * size;
        for i in 0..samples {
            let r = (i as f64 / (samples - 1) as f64 - 0.5) * length;
            let (y, x) = (c - r * s, c + r * co);
            let (yi, xi) = (y.round(), x.round());
            if yi >= 0.0 && xi >= 0.0 && (yi as usize) < size && (xi as usize) < size {
                k.weights[yi as usize * size + xi as usize] += 1.0;
            }
        }
        k.raw_sum = k.weights.iter().sum();
        Ok(k.normalized())
    }

    /// Parses the plain-text kernel format: a first line `kh kw`, then
    /// `kh·kw` whitespace-separated reals in row-major order.
    pub fn parse(text: &str) -> Result<Self, ImagingError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| ImagingError::Kernel("empty kernel file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| ImagingError::Kernel(format!("bad header {header:?}: {e}")))?;
        if dims.len() != 2 {
            return Err(ImagingError::Kernel(format!(
                "header must be `kh kw`, got {header:?}"
            )));
        }
        let weights: Vec<f64> = lines
            .flat_map(|l| l.split_whitespace())
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ImagingError::Kernel(format!("bad weight: {e}")))?;
        Self::new(dims[0], dims[1], weights)
    }

    /// Reads a kernel file and normalizes it to unit sum.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImagingError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ImagingError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let k = Self::parse(&text)?;
        if (k.raw_sum - 1.0).abs() > NORMALIZATION_WARN_TOL {
            log::warn!(
                "kernel {} sums to {} and is being normalized to 1",
                path.display(),
                k.raw_sum
            );
        }
        Ok(k.normalized())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.kh, self.kw);
        for row in self.weights.chunks(self.kw) {
            let line: Vec<String> = row.iter().map(|w| format!("{w:e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    /// Copy scaled to unit sum. The recorded raw sum is kept.
    pub fn normalized(&self) -> Self {
        let sum: f64 = self.weights.iter().sum();
        let mut k = self.clone();
        if sum != 0.0 {
            for w in &mut k.weights {
                *w /= sum;
            }
        }
        k
    }

    pub fn kh(&self) -> usize {
        self.kh
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, a: usize, b: usize) -> f64 {
        self.weights[a * self.kw + b]
    }

    /// Sum of the weights as originally supplied.
    pub fn raw_sum(&self) -> f64 {
        self.raw_sum
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Kernel rotated by 180°, the spatial form of the adjoint.
    pub fn flipped(&self) -> Self {
        let mut w = self.weights.clone();
        w.reverse();
        Self {
            kh: self.kh,
            kw: self.kw,
            weights: w,
            raw_sum: self.raw_sum,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        let f = self.flipped();
        self.weights
            .iter()
            .zip(&f.weights)
            .all(|(a, b)| (a - b).abs() <= 1e-15 * a.abs().max(1.0))
    }
}

/// Periodic convolution by direct spatial summation:
/// `y[r, q] = Σ k[a, b] · x[(r - a + ch) mod H, (q - b + cw) mod W]`.
pub fn convolve_periodic(x: &ImageTensor, kernel: &BlurKernel) -> Result<ImageTensor, ImagingError> {
    let s = x.shape();
    if kernel.kh() > s.height || kernel.kw() > s.width {
        return Err(ImagingError::KernelTooLarge {
            kh: kernel.kh(),
            kw: kernel.kw(),
            shape: s,
        });
    }
    let (ch, cw) = ((kernel.kh() / 2) as isize, (kernel.kw() / 2) as isize);
    let (h, w) = (s.height as isize, s.width as isize);
    let mut out = vec![0.0; s.len()];
    for c in 0..s.channels {
        let src = x.channel(c);
        let dst = &mut out[c * s.plane()..(c + 1) * s.plane()];
        for r in 0..h {
            for q in 0..w {
                let mut acc = 0.0;
                for a in 0..kernel.kh() as isize {
                    let rr = (r - a + ch).rem_euclid(h) as usize;
                    for b in 0..kernel.kw() as isize {
                        let qq = (q - b + cw).rem_euclid(w) as usize;
                        acc += kernel.weight(a as usize, b as usize) * src[rr * s.width + qq];
                    }
                }
                dst[(r * w + q) as usize] = acc;
            }
        }
    }
    Ok(ImageTensor::from_vec_unchecked(s, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Shape;

    #[test]
    fn parse_text_format() {
        let k = BlurKernel::parse("3 1\n0.25 0.5\n0.25\n").unwrap();
        assert_eq!((k.kh(), k.kw()), (3, 1));
        assert_eq!(k.weights(), &[0.25, 0.5, 0.25]);
        assert!(BlurKernel::parse("2 2\n1 1 1 1").is_err());
        assert!(BlurKernel::parse("3 3\n1 1").is_err());
        assert!(BlurKernel::parse("").is_err());
    }

    #[test]
    fn normalization_is_explicit() {
        let k = BlurKernel::new(1, 3, vec![1.0, 2.0, 1.0]).unwrap();
        assert_eq!(k.sum(), 4.0);
        let n = k.normalized();
        assert!((n.sum() - 1.0).abs() < 1e-15);
        assert_eq!(n.raw_sum(), 4.0);
    }

    #[test]
    fn load_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.txt");
        std::fs::write(&p, "1 3\n2 4 2\n").unwrap();
        let k = BlurKernel::load(&p).unwrap();
        assert_eq!(k.weights(), &[0.25, 0.5, 0.25]);
        assert_eq!(k.raw_sum(), 8.0);
    }

    #[test]
    fn text_round_trip() {
        let k = BlurKernel::gaussian(5, 1.2).unwrap();
        let back = BlurKernel::parse(&k.to_text()).unwrap();
        for (a, b) in k.weights().iter().zip(back.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn motion_kernel_is_normalized_and_oriented() {
        let k = BlurKernel::motion(9, 7.0, 0.0).unwrap();
        assert!((k.sum() - 1.0).abs() < 1e-12);
        // horizontal blur: all mass on the middle row
        let mid: f64 = (0..9).map(|b| k.weight(4, b)).sum();
        assert!((mid - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delta_convolution_is_identity() {
        let x = ImageTensor::from_fn(Shape::new(4, 5, 2), |c, r, q| (c + 3 * r + 7 * q) as f64);
        let y = convolve_periodic(&x, &BlurKernel::delta()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn off_center_tap_shifts() {
        // weight at (ch+1, cw) moves content down by one row
        let mut w = vec![0.0; 9];
        w[7] = 1.0;
        let k = BlurKernel::new(3, 3, w).unwrap();
        let x = ImageTensor::from_fn(Shape::new(4, 4, 1), |_, r, q| (4 * r + q) as f64);
        let y = convolve_periodic(&x, &k).unwrap();
        assert_eq!(y.get(0, 1, 2), x.get(0, 0, 2));
        assert_eq!(y.get(0, 0, 2), x.get(0, 3, 2));
    }

    #[test]
    fn rejects_kernel_larger_than_image() {
        let x = ImageTensor::zeros(Shape::new(2, 2, 1));
        assert!(convolve_periodic(&x, &BlurKernel::boxcar(3).unwrap()).is_err());
    }
}
