//! Shared builders for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use scorepnp::adaptation::{AdaptedDenoiser, RangePolicy};
use scorepnp::imaging::{BlurKernel, ImageTensor, LinearOperator, Shape};
use scorepnp::priors::{emulate_vp_network, AnalyticScore, GaussianPrior, ScoreFunction};
use scorepnp::rng::GaussianStream;
use scorepnp::schedule::NoiseSchedule;
use scorepnp::solvers::QuadraticDataTerm;

/// A random 8×8 deblurring problem with its dense matrix.
pub struct Instance {
    pub dt: QuadraticDataTerm,
    pub a: DMatrix<f64>,
    pub mu: Vec<f64>,
}

pub fn dense(op: &LinearOperator) -> DMatrix<f64> {
    let s = op.shape();
    let n = s.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = op.forward(&ImageTensor::new(s, e).unwrap()).unwrap();
        m.set_column(j, &DVector::from_column_slice(col.as_slice()));
    }
    m
}

pub fn deblur_instance(seed: u64) -> Instance {
    let s = Shape::new(8, 8, 1);
    let mut rng = GaussianStream::new(seed);
    let kernel = BlurKernel::new(3, 3, (0..9).map(|_| rng.uniform()).collect()).unwrap().normalized();
    let op = LinearOperator::circulant_blur(s, kernel).unwrap();
    let truth = ImageTensor::new(s, (0..s.len()).map(|_| rng.uniform()).collect()).unwrap();
    let mut y = op.forward(&truth).unwrap();
    y.axpy(0.05, &ImageTensor::new(s, rng.normal_vec(s.len())).unwrap()).unwrap();
    let mu = (0..s.len()).map(|_| 0.3 + 0.4 * rng.uniform()).collect();
    let a = dense(&op);
    Instance {
        dt: QuadraticDataTerm::new(op, y).unwrap(),
        a,
        mu,
    }
}

/// Denoiser of the prior `N(mu, rho² I)`: `D_σ(v) = a·v + (1 − a)·mu` with
/// `a = ρ²/(ρ² + σ²)`.
pub fn gaussian_denoiser(mu: &[f64], rho: f64) -> AdaptedDenoiser {
    let g = GaussianPrior::new(mu.to_vec(), rho).unwrap();
    AdaptedDenoiser::new(Arc::new(AnalyticScore::new(Arc::new(g))), None, RangePolicy::Strict).unwrap()
}

/// The same prior seen through a VP network emulator whose schedule spans
/// `[sigma_min, sigma_max]` in `steps` geometric levels.
pub fn vp_gaussian_denoiser(mu: &[f64], rho: f64, sigma_min: f64, sigma_max: f64, steps: usize) -> AdaptedDenoiser {
    let g = GaussianPrior::new(mu.to_vec(), rho).unwrap();
    let levels = NoiseSchedule::ve_geometric(sigma_min, sigma_max, steps).unwrap();
    let sched = NoiseSchedule::vp_from_sigmas(levels.sigmas()).unwrap();
    let vp: Arc<dyn ScoreFunction> =
        Arc::new(emulate_vp_network(Arc::new(AnalyticScore::new(Arc::new(g))), sched).unwrap());
    AdaptedDenoiser::new(vp, None, RangePolicy::Strict).unwrap()
}

/// Solves `(γAᵀA + w·I) x = γAᵀy + w·mu`.
pub fn quadratic_oracle(inst: &Instance, gamma: f64, w: f64) -> DVector<f64> {
    let n = inst.a.ncols();
    let ata = inst.a.transpose() * &inst.a;
    let lhs = gamma * ata + w * DMatrix::identity(n, n);
    let rhs = gamma * inst.a.transpose() * DVector::from_column_slice(inst.dt.y().as_slice())
        + w * DVector::from_column_slice(&inst.mu);
    lhs.lu().solve(&rhs).unwrap()
}

pub fn l2_error(x: &ImageTensor, want: &DVector<f64>) -> f64 {
    x.as_slice().iter().zip(want.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Posterior mean of the scalar model `x ~ N(0.3, 1)`, `y = x + 0.5·n`
/// observed at `y = 1.2`.
pub const CONJUGATE_POSTERIOR_MEAN: f64 = 1.02;

/// Runs `runs` seeded DiffPIR samples (`λ = 1`, `K` levels from 50 down to
/// 1e-3) on the scalar model; returns every sample.
pub fn diffpir_conjugate_samples(runs: u64, iterations: usize, zeta: f64) -> Vec<f64> {
    use scorepnp::solvers::{diffpir_sample, Method, Preset, SigmaSchedule, SolverConfig};
    let s = Shape::new(1, 1, 1);
    let y = ImageTensor::new(s, vec![1.2]).unwrap();
    let dt = QuadraticDataTerm::new(LinearOperator::identity(s), y).unwrap();
    let d = vp_gaussian_denoiser(&[0.3], 1.0, 5e-4, 60.0, 200);
    let mut cfg = SolverConfig::preset(Method::Diffpir, Preset::Sbm);
    cfg.lambda = Some(1.0);
    cfg.zeta = Some(zeta);
    cfg.noise_sigma = Some(0.5);
    cfg.iterations = iterations;
    cfg.sigma = Some(SigmaSchedule::LogSpaced { from: 50.0, to: 1e-3 });
    (0..runs)
        .map(|seed| {
            cfg.seed = seed;
            diffpir_sample(&dt, &d, &cfg, None).unwrap().x.as_slice()[0]
        })
        .collect()
}

pub fn mean_and_standard_error(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
