//! Priors and synthetic ground truth for experiments.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::config::{BuiltinModel, EmulatedConvention, ModelSpec, PriorSpec};
use super::HarnessError;
use crate::imaging::{ImageTensor, Shape};
use crate::priors::remote::RemoteScore;
use crate::priors::{
    emulate_ve_network, emulate_vp_network, AnalyticPrior, AnalyticScore, GmmPrior, PatchGeometry, PatchScore,
    ScoreFunction,
};
use crate::rng::GaussianStream;
use crate::schedule::{NoiseSchedule, ScheduleSpec};
use crate::toy::{load_checkpoint, toy_gmm};

/// Mixture of three stationary Gaussian fields with constant means
/// 0.3 / 0.5 / 0.7 and squared-exponential covariance
/// `s²·exp(−d²/(2ℓ²))·κ(c, c') + δ²·[same pixel]`, where `d` is the pixel
/// distance, `κ` is 1 within a channel and [`SmoothGmm::CHANNEL_CORR`]
/// across channels, and `ℓ` differs per component.
///
/// Patches of images drawn from [`SmoothGmm::image_gmm`] follow
/// [`SmoothGmm::patch_gmm`] up to the periodization error noted there.
pub struct SmoothGmm;

impl SmoothGmm {
    pub const MEANS: [f64; 3] = [0.3, 0.5, 0.7];
    pub const LENGTHS: [f64; 3] = [3.0, 2.0, 1.5];
    pub const STD: f64 = 0.15;
    pub const NUGGET: f64 = 0.02;
    pub const CHANNEL_CORR: f64 = 0.9;

    fn build(shape: Shape, corr: impl Fn((usize, usize), (usize, usize), f64) -> f64) -> Result<GmmPrior, HarnessError> {
        let d = shape.len();
        let coords: Vec<(usize, usize, usize)> = (0..shape.channels)
            .flat_map(|c| (0..shape.height).flat_map(move |r| (0..shape.width).map(move |q| (c, r, q))))
            .collect();
        let mut means = Vec::new();
        let mut covs = Vec::new();
        for (m, l) in Self::MEANS.iter().zip(Self::LENGTHS) {
            means.push(DVector::from_element(d, *m));
            let cov = DMatrix::from_fn(d, d, |i, j| {
                let (ci, ri, qi) = coords[i];
                let (cj, rj, qj) = coords[j];
                let kappa = if ci == cj { 1.0 } else { Self::CHANNEL_CORR };
                let mut v = Self::STD * Self::STD * kappa * corr((ri, qi), (rj, qj), l);
                if i == j {
                    v += Self::NUGGET * Self::NUGGET;
                }
                v
            });
            covs.push(cov);
        }
        Ok(GmmPrior::from_parts(vec![1.0 / 3.0; 3], means, covs)?)
    }

    /// Model of one `size × size × channels` patch.
    pub fn patch_gmm(size: usize, channels: usize) -> Result<GmmPrior, HarnessError> {
        Self::build(Shape::new(size, size, channels), |(r1, q1), (r2, q2), l| {
            gauss(r1 as f64 - r2 as f64, l) * gauss(q1 as f64 - q2 as f64, l)
        })
    }

    /// Whole-image model on the torus. The kernel is periodized per axis,
    /// which keeps it positive definite; within a patch it differs from the
    /// patch kernel by terms of order `exp(−(n − p)²/(2ℓ²))` for an `n`-pixel
    /// side and `p`-pixel patch.
    pub fn image_gmm(shape: Shape) -> Result<GmmPrior, HarnessError> {
        let (h, w) = (shape.height, shape.width);
        Self::build(shape, move |(r1, q1), (r2, q2), l| {
            periodic(r1 as f64 - r2 as f64, h, l) * periodic(q1 as f64 - q2 as f64, w, l)
        })
    }
}

fn gauss(d: f64, l: f64) -> f64 {
    (-d * d / (2.0 * l * l)).exp()
}

fn periodic(d: f64, n: usize, l: f64) -> f64 {
    let reach = (8.0 * l / n as f64).ceil() as i64 + 1;
    (-reach..=reach).map(|k| gauss(d + (k * n as i64) as f64, l)).sum()
}

fn patch_size(spec: &ModelSpec, shape: Shape) -> Result<Option<usize>, HarnessError> {
    match spec.patch {
        Some(p) if p > shape.height || p > shape.width => Err(HarnessError::Config(format!(
            "patch {p} does not fit {}x{} images",
            shape.height, shape.width
        ))),
        p => Ok(p),
    }
}

/// The analytic prior over one patch (or the whole image when no patch is set).
fn analytic_prior(spec: &ModelSpec, shape: Shape) -> Result<GmmPrior, HarnessError> {
    let unit_shape = match patch_size(spec, shape)? {
        Some(p) => Shape::new(p, p, shape.channels),
        None => shape,
    };
    let gmm = match (&spec.model, &spec.gmm_file) {
        (Some(BuiltinModel::SmoothPatchGmm), _) => {
            SmoothGmm::patch_gmm(unit_shape.height, shape.channels)?
        }
        (Some(BuiltinModel::ToyGmm), _) => toy_gmm(),
        (None, Some(path)) => GmmPrior::load(path)?,
        (None, None) => return Err(HarnessError::Config("model or gmm_file is required".into())),
    };
    if spec.model != Some(BuiltinModel::ToyGmm) && gmm.dim() != unit_shape.len() {
        return Err(HarnessError::Config(format!(
            "model dimension {} does not match {} values per {}",
            gmm.dim(),
            unit_shape.len(),
            if spec.patch.is_some() { "patch" } else { "image" }
        )));
    }
    Ok(gmm)
}

/// Draws one ground-truth image of `shape` from `spec` per seed.
///
/// The smooth built-in model is sampled as a whole image on the torus; GMM
/// files with a patch size are tiled with independent patch draws; the toy
/// model fills consecutive value pairs.
pub fn sample_images(spec: &ModelSpec, shape: Shape, seeds: &[u64]) -> Result<Vec<ImageTensor>, HarnessError> {
    let patch = patch_size(spec, shape)?;
    let whole = match (spec.model, patch) {
        (Some(BuiltinModel::SmoothPatchGmm), _) => Some(SmoothGmm::image_gmm(shape)?),
        (Some(BuiltinModel::ToyGmm), _) => None,
        _ => Some(analytic_prior(spec, shape)?),
    };
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut rng = GaussianStream::new(seed);
        let img = match (spec.model, patch, &whole) {
            (Some(BuiltinModel::ToyGmm), _, _) => {
                let g = toy_gmm();
                let data: Vec<f64> = (0..shape.len() / 2).flat_map(|_| g.sample(&mut rng)).collect();
                ImageTensor::new(shape, data)?
            }
            (None, Some(p), Some(g)) => tile(g, shape, p, &mut rng)?,
            (_, _, Some(g)) => ImageTensor::new(shape, g.sample(&mut rng))?,
            (_, _, None) => unreachable!("only the toy model has no mixture"),
        };
        out.push(img);
    }
    Ok(out)
}

fn tile(g: &GmmPrior, shape: Shape, p: usize, rng: &mut GaussianStream) -> Result<ImageTensor, HarnessError> {
    let tile = Shape::new(p, p, shape.channels);
    let mut out = ImageTensor::zeros(shape);
    let buf = out.as_mut_slice();
    for r0 in (0..shape.height).step_by(p) {
        for q0 in (0..shape.width).step_by(p) {
            let t = ImageTensor::new(tile, g.sample(rng))?;
            for c in 0..shape.channels {
                for a in 0..p.min(shape.height - r0) {
                    for b in 0..p.min(shape.width - q0) {
                        buf[shape.index(c, r0 + a, q0 + b)] = t.get(c, a, b);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn default_schedule(convention: EmulatedConvention) -> Result<Option<NoiseSchedule>, HarnessError> {
    Ok(match convention {
        EmulatedConvention::Direct => None,
        EmulatedConvention::Vp => Some(NoiseSchedule::from_spec(&ScheduleSpec::default())?),
        EmulatedConvention::Ve => Some(NoiseSchedule::ve_geometric(0.002, 80.0, 1000)?),
    })
}

/// Score model for images of `shape`. Remote priors are contacted here, so
/// an absent server is reported before any solver runs.
pub fn build_score(prior: &PriorSpec, shape: Shape) -> Result<Arc<dyn ScoreFunction>, HarnessError> {
    match prior {
        PriorSpec::Analytic {
            convention, schedule, ..
        } => {
            let spec = prior.model().expect("analytic");
            let gmm = analytic_prior(&spec, shape)?;
            let direct: Arc<dyn ScoreFunction> = Arc::new(AnalyticScore::new(Arc::new(gmm)));
            let sched = match schedule {
                Some(s) => Some(NoiseSchedule::from_spec(s)?),
                None => default_schedule(*convention)?,
            };
            let net: Arc<dyn ScoreFunction> = match (convention, sched) {
                (EmulatedConvention::Direct, _) | (_, None) => direct,
                (EmulatedConvention::Ve, Some(s)) => Arc::new(emulate_ve_network(direct, s)?),
                (EmulatedConvention::Vp, Some(s)) => Arc::new(emulate_vp_network(direct, s)?),
            };
            Ok(match patch_size(&spec, shape)? {
                Some(p) => Arc::new(PatchScore::new(net, PatchGeometry::square(p))?),
                None => net,
            })
        }
        PriorSpec::ToyCheckpoint { path } => {
            let net = load_checkpoint(path)?;
            if !shape.len().is_multiple_of(net.dim()) {
                return Err(HarnessError::Config(format!(
                    "{}-value images cannot be split into {}-dimensional points",
                    shape.len(),
                    net.dim()
                )));
            }
            Ok(Arc::new(net))
        }
        PriorSpec::Remote { .. } => {
            let cfg = prior.remote_config().expect("remote");
            let score = RemoteScore::connect(&cfg).map_err(|e| HarnessError::Transport(format!("{}: {e}", cfg.url)))?;
            Ok(Arc::new(score))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::gmm_mmse_denoise;

    fn smooth(patch: Option<usize>) -> ModelSpec {
        ModelSpec {
            model: Some(BuiltinModel::SmoothPatchGmm),
            gmm_file: None,
            patch,
        }
    }

    #[test]
    fn image_model_patches_match_the_patch_model() {
        let ishape = Shape::new(24, 24, 2);
        let img = SmoothGmm::image_gmm(ishape).unwrap();
        let patch = SmoothGmm::patch_gmm(4, 2).unwrap();
        let pshape = Shape::new(4, 4, 2);
        // the patch at origin (10, 9) wraps around both edges
        let idx: Vec<usize> = (0..2)
            .flat_map(|c| (0..4).flat_map(move |a| (0..4).map(move |b| ishape.index(c, (22 + a) % 24, (21 + b) % 24))))
            .collect();
        for k in 0..3 {
            let (ci, cp) = (img.covariance(k), patch.covariance(k));
            for (i, &ii) in idx.iter().enumerate() {
                assert_eq!(img.mean(k)[ii], patch.mean(k)[i]);
                for (j, &jj) in idx.iter().enumerate() {
                    assert!((ci[(ii, jj)] - cp[(i, j)]).abs() < 1e-12, "component {k}");
                }
            }
        }
        assert_eq!(pshape.len(), patch.dim());
    }

    #[test]
    fn samples_are_deterministic_and_plausible() {
        let shape = Shape::new(16, 16, 1);
        let s = sample_images(&smooth(Some(4)), shape, &[5, 5, 6]).unwrap();
        let (a, b, c) = (&s[0], &s[1], &s[2]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let m = a.mean();
        assert!((0.0..1.0).contains(&m), "{m}");
    }

    #[test]
    fn analytic_score_is_a_patch_average_of_the_emulated_gmm() {
        let prior = PriorSpec::Analytic {
            model: Some(BuiltinModel::SmoothPatchGmm),
            gmm_file: None,
            patch: Some(3),
            convention: EmulatedConvention::Direct,
            schedule: None,
        };
        let shape = Shape::new(5, 5, 1);
        let score = build_score(&prior, shape).unwrap();
        let x = sample_images(&smooth(Some(3)), shape, &[1]).unwrap().remove(0);
        let sigma = 0.1;
        let s = score.score(&x, sigma).unwrap();
        // the denoiser is the overlap average of per-patch MMSE estimates
        let g = SmoothGmm::patch_gmm(3, 1).unwrap();
        let mut acc = [0.0; 25];
        for r0 in 0..5 {
            for q0 in 0..5 {
                let p: Vec<f64> = (0..3).flat_map(|a| (0..3).map(move |b| (a, b))).map(|(a, b)| x.get(0, (r0 + a) % 5, (q0 + b) % 5)).collect();
                let d = gmm_mmse_denoise(&g, &p, sigma).unwrap();
                for a in 0..3 {
                    for b in 0..3 {
                        acc[shape.index(0, (r0 + a) % 5, (q0 + b) % 5)] += d[a * 3 + b] / 9.0;
                    }
                }
            }
        }
        for i in 0..25 {
            let tweedie = x.as_slice()[i] + sigma * sigma * s.as_slice()[i];
            assert!((tweedie - acc[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn mismatched_dimensions_are_config_errors() {
        let shape = Shape::new(8, 8, 1);
        assert!(matches!(analytic_prior(&smooth(Some(9)), shape), Err(HarnessError::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("g.json");
        SmoothGmm::patch_gmm(2, 1).unwrap().save(&f).unwrap();
        let spec = ModelSpec {
            model: None,
            gmm_file: Some(f),
            patch: Some(3),
        };
        assert!(matches!(analytic_prior(&spec, shape), Err(HarnessError::Config(_))));
        let spec = ModelSpec { patch: Some(2), ..spec };
        let img = sample_images(&spec, Shape::new(5, 5, 1), &[1]).unwrap().remove(0);
        assert!(img.first_non_finite().is_none());
    }

    #[test]
    fn absent_server_is_a_transport_error() {
        // bind then drop to obtain a port with no listener
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let prior = PriorSpec::Remote {
            url: format!("http://127.0.0.1:{port}"),
            timeout_ms: 2000,
        };
        let e = build_score(&prior, Shape::new(4, 4, 1)).err().unwrap();
        assert!(matches!(e, HarnessError::Transport(_)), "{e}");
    }
}
