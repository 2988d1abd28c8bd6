//! Patch-wise application of a score model to whole images.
//!
//! Every periodic unit-stride patch is scored independently and the patch
//! scores are averaged back onto the pixels they cover. Since the Tweedie
//! step is affine in the score, the resulting denoiser is the overlap average
//! of per-patch denoisers. This is a small-scale stand-in for whole-image
//! networks, not a model of natural images.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Convention, PriorError, ScoreFunction, ValueDomain};
use crate::imaging::{ImageTensor, Shape};
use crate::schedule::NoiseSchedule;

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub height: usize,
    pub width: usize,
}

impl PatchGeometry {
    pub fn square(size: usize) -> Self {
        Self {
            height: size,
            width: size,
        }
    }

    pub fn patch_shape(&self, channels: usize) -> Shape {
        Shape::new(self.height, self.width, channels)
    }
}

#[derive(Clone)]
pub struct PatchScore {
    inner: Arc<dyn ScoreFunction>,
    geometry: PatchGeometry,
}

impl PatchScore {
    pub fn new(inner: Arc<dyn ScoreFunction>, geometry: PatchGeometry) -> Result<Self, PriorError> {
        if geometry.height == 0 || geometry.width == 0 {
            return Err(PriorError::InvalidPrior("patch size must be positive".into()));
        }
        Ok(Self { inner, geometry })
    }

    pub fn geometry(&self) -> PatchGeometry {
        self.geometry
    }

    fn extract(&self, x: &ImageTensor, r0: usize, q0: usize) -> ImageTensor {
        let (h, w) = (x.height(), x.width());
        let shape = self.geometry.patch_shape(x.channels());
        ImageTensor::from_fn(shape, |c, a, b| x.get(c, (r0 + a) % h, (q0 + b) % w))
    }
}

impl ScoreFunction for PatchScore {
    fn convention(&self) -> Convention {
        self.inner.convention()
    }

    fn schedule(&self) -> Option<&NoiseSchedule> {
        self.inner.schedule()
    }

    fn input_domain(&self) -> ValueDomain {
        self.inner.input_domain()
    }

    fn score(&self, x: &ImageTensor, cond: f64) -> Result<ImageTensor, PriorError> {
        let shape = x.shape();
        let PatchGeometry { height: ph, width: pw } = self.geometry;
        if ph > shape.height || pw > shape.width {
            return Err(PriorError::Condition(format!(
                "patch {ph}x{pw} larger than image {shape}"
            )));
        }
        let (h, w) = (shape.height, shape.width);
        let origins: Vec<(usize, usize)> = (0..h).flat_map(|r| (0..w).map(move |q| (r, q))).collect();
        let mut acc = vec![0.0; shape.len()];
        for chunk in origins.chunks(CHUNK) {
            let patches: Vec<ImageTensor> = chunk.iter().map(|&(r, q)| self.extract(x, r, q)).collect();
            let scores = self.inner.score_batch(&patches, cond)?;
            for (&(r0, q0), s) in chunk.iter().zip(&scores) {
                for c in 0..shape.channels {
                    for a in 0..ph {
                        for b in 0..pw {
                            acc[shape.index(c, (r0 + a) % h, (q0 + b) % w)] += s.get(c, a, b);
                        }
                    }
                }
            }
        }
        let k = 1.0 / (ph * pw) as f64;
        acc.iter_mut().for_each(|v| *v *= k);
        Ok(x.with_data(acc)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{AnalyticScore, GaussianPrior};

    #[test]
    fn gaussian_patches_reduce_to_pixelwise_gaussian() {
        // isotropic Gaussian over patches: every patch score is (μ − x)/v,
        // so the overlap average is the pixelwise Gaussian score
        let g = GaussianPrior::new(vec![0.4; 9], 0.5).unwrap();
        let p = PatchScore::new(Arc::new(AnalyticScore::new(Arc::new(g))), PatchGeometry::square(3)).unwrap();
        let x = ImageTensor::from_fn(Shape::new(6, 5, 1), |_, r, q| (r as f64 * 0.3 - q as f64 * 0.2).sin());
        let s = p.score(&x, 0.2).unwrap();
        let v = 0.25 + 0.04;
        for (a, b) in s.as_slice().iter().zip(x.as_slice()) {
            assert!((a - (0.4 - b) / v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_oversized_patch() {
        let g = GaussianPrior::new(vec![0.0; 16], 1.0).unwrap();
        let p = PatchScore::new(Arc::new(AnalyticScore::new(Arc::new(g))), PatchGeometry::square(4)).unwrap();
        let x = ImageTensor::zeros(Shape::new(3, 8, 1));
        assert!(p.score(&x, 0.1).is_err());
    }
}
