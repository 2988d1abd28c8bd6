use serde::{Deserialize, Serialize};

use super::ImagingError;

/// Image geometry. Pixel data is stored planar: channel-major, each channel
/// row-major, which is the `N=1` slice of an NCHW tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, row: usize, col: usize) -> usize {
        (c * self.height + row) * self.width + col
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// H×W×C real-valued image; the state shared by all solvers.
///
/// Values are nominally in `[0, 1]` but are never clamped by arithmetic;
/// clamping happens only on export.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self, ImagingError> {
        if shape.height == 0 || shape.width == 0 || shape.channels == 0 {
            return Err(ImagingError::InvalidShape(shape));
        }
        if data.len() != shape.len() {
            return Err(ImagingError::DataLength {
                shape,
                expected: shape.len(),
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImagingError::NonFinite { index: i });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Builds an image from `f(channel, row, col)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for r in 0..shape.height {
                for q in 0..shape.width {
                    data.push(f(c, r, q));
                }
            }
        }
        Self { shape, data }
    }

    /// Wraps a vector produced by internal arithmetic. Length is checked,
    /// finiteness is left to the caller.
    pub(crate) fn from_vec_unchecked(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.shape.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[self.shape.index(c, row, col)]
    }

    pub fn check_same_shape(&self, other: &ImageTensor) -> Result<(), ImagingError> {
        if self.shape != other.shape {
            return Err(ImagingError::DimensionMismatch {
                expected: self.shape,
                found: other.shape,
            });
        }
        Ok(())
    }

    /// Replaces the data with `values` (same length required).
    pub fn with_data(&self, values: Vec<f64>) -> Result<ImageTensor, ImagingError> {
        ImageTensor::new(self.shape, values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &ImageTensor,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ImageTensor, ImagingError> {
        self.check_same_shape(other)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &ImageTensor) -> Result<ImageTensor, ImagingError> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ImageTensor) -> Result<ImageTensor, ImagingError> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> ImageTensor {
        self.map(|v| k * v)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ImageTensor) -> Result<(), ImagingError> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &ImageTensor) -> Result<f64, ImagingError> {
        self.check_same_shape(other)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn distance(&self, other: &ImageTensor) -> Result<f64, ImagingError> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Index of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    /// Copy clamped to `[0, 1]`, used only for export.
    pub fn clamped01(&self) -> ImageTensor {
        self.map(|v| v.clamp(0.0, 1.0))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_nan() {
        let s = Shape::new(2, 2, 1);
        assert!(matches!(
            ImageTensor::new(s, vec![0.0; 3]),
            Err(ImagingError::DataLength { .. })
        ));
        assert!(matches!(
            ImageTensor::new(s, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(ImagingError::NonFinite { index: 1 })
        ));
        assert!(ImageTensor::new(Shape::new(0, 2, 1), vec![]).is_err());
    }

    #[test]
    fn planar_layout() {
        let s = Shape::new(2, 3, 2);
        let img = ImageTensor::from_fn(s, |c, r, q| (100 * c + 10 * r + q) as f64);
        assert_eq!(img.get(1, 1, 2), 112.0);
        assert_eq!(img.as_slice()[s.index(1, 1, 2)], 112.0);
        assert_eq!(img.channel(1)[0], 100.0);
    }

    #[test]
    fn arithmetic_checks_shapes() {
        let a = ImageTensor::filled(Shape::new(2, 2, 1), 1.0);
        let b = ImageTensor::filled(Shape::new(2, 3, 1), 1.0);
        assert!(a.add(&b).is_err());
        let mut c = a.clone();
        c.axpy(2.0, &a).unwrap();
        assert_eq!(c.as_slice(), &[3.0; 4]);
        assert_eq!(a.dot(&c).unwrap(), 12.0);
    }

    #[test]
    fn clamp_is_export_only() {
        let a = ImageTensor::new(Shape::new(1, 2, 1), vec![-0.5, 1.5]).unwrap();
        let b = a.scale(1.0);
        assert_eq!(b.as_slice(), &[-0.5, 1.5]);
        assert_eq!(a.clamped01().as_slice(), &[0.0, 1.0]);
    }
}
