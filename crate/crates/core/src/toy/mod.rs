//! Desk-scale denoising score matching on low-dimensional data.

mod checkpoint;
mod net;
mod train;

pub use self::checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use self::net::MlpScoreNet;
pub use self::train::{
    dsm_loss, first_significant_increase, grad_check, train_toy_score, window_means, DsmBatch, DsmTrainConfig, TrainedScore, Weighting,
    MIN_TRAINING_SAMPLES,
};

use crate::priors::{AnalyticPrior, GmmPrior, PriorError};
use crate::rng::GaussianStream;
use crate::schedule::{NoiseSchedule, ScheduleError};

#[derive(Debug, thiserror::Error)]
pub enum ToyError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
}

/// Per-component standard deviation of [`toy_gmm`].
pub const TOY_COMPONENT_STD: f64 = 0.35;

/// Equal-weight mixture of two isotropic Gaussians at `(±1, 0)`.
pub fn toy_gmm() -> GmmPrior {
    GmmPrior::isotropic(
        vec![0.5, 0.5],
        vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
        TOY_COMPONENT_STD,
    )
    .expect("valid mixture")
}

/// Geometric VE levels from 0.02 to 2 in 100 steps.
pub fn toy_ve_schedule() -> NoiseSchedule {
    NoiseSchedule::ve_geometric(0.02, 2.0, 100).expect("valid schedule")
}

/// VP schedule with the same noise levels as [`toy_ve_schedule`].
pub fn toy_vp_schedule() -> NoiseSchedule {
    NoiseSchedule::vp_from_sigmas(toy_ve_schedule().sigmas()).expect("valid schedule")
}

/// `n` independent draws from `prior`.
pub fn draw_samples(prior: &dyn AnalyticPrior, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = GaussianStream::new(seed);
    (0..n).map(|_| prior.sample(&mut rng)).collect()
}

/// Regular grid of 2-D points within `2.5·√(s₀² + σ²)` of a mixture mean,
/// where `s₀` is [`TOY_COMPONENT_STD`].
pub fn held_out_grid(sigma: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let radius = 2.5 * (TOY_COMPONENT_STD.powi(2) + sigma * sigma).sqrt();
    let (x0, x1) = (-1.0 - radius, 1.0 + radius);
    let n = per_axis.max(2);
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let p = vec![
                x0 + (x1 - x0) * i as f64 / (n - 1) as f64,
                -radius + 2.0 * radius * j as f64 / (n - 1) as f64,
            ];
            let near = [-1.0, 1.0].iter().any(|m| ((p[0] - m).powi(2) + p[1] * p[1]).sqrt() <= radius);
            if near {
                out.push(p);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_stays_near_the_modes() {
        let g = held_out_grid(0.1, 21);
        assert!(g.len() > 100);
        let r = 2.5 * (0.35f64.powi(2) + 0.01).sqrt();
        for p in &g {
            let d = ((p[0].abs() - 1.0).powi(2) + p[1] * p[1]).sqrt();
            assert!(d <= r + 1e-12);
        }
    }

    #[test]
    fn toy_schedules_share_levels() {
        let ve = toy_ve_schedule();
        let vp = toy_vp_schedule();
        for t in 1..=100 {
            assert!((ve.sigma(t).unwrap() - vp.sigma(t).unwrap()).abs() <= 1e-12 * ve.sigma(t).unwrap());
        }
        let s = draw_samples(&toy_gmm(), 1000, 3);
        assert_eq!(s.len(), 1000);
        let mean_abs_x = s.iter().map(|p| p[0].abs()).sum::<f64>() / 1000.0;
        assert!((mean_abs_x - 1.0).abs() < 0.05);
    }
}

/// Mean distance, in units of [`TOY_COMPONENT_STD`], between `denoiser` and
/// the closed-form MMSE denoiser of `prior` over [`held_out_grid`] points.
/// The oracle is evaluated at the level the denoiser actually used.
pub fn denoiser_error(
    denoiser: &dyn crate::adaptation::Denoiser,
    prior: &GmmPrior,
    sigma: f64,
    per_axis: usize,
) -> Result<f64, ToyError> {
    use crate::imaging::{ImageTensor, Shape};
    let m = denoiser
        .resolve(sigma)
        .map_err(|e| ToyError::Config(format!("cannot denoise at {sigma}: {e}")))?;
    let grid = held_out_grid(sigma, per_axis);
    let mut total = 0.0;
    for p in &grid {
        let x = ImageTensor::new(Shape::new(1, p.len(), 1), p.clone())?;
        let got = denoiser
            .denoise_at(&x, &m)
            .map_err(|e| ToyError::Config(format!("denoising failed: {e}")))?;
        let want = crate::priors::gmm_mmse_denoise(prior, p, m.sigma_achieved)?;
        let err: f64 = got.as_slice().iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum();
        total += err.sqrt();
    }
    Ok(total / grid.len() as f64 / TOY_COMPONENT_STD)
}

/// Held-out DSM losses of a network and of the exact score of `prior` under
/// the same schedule, on `n` fresh samples with shared noise draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComparison {
    pub net: f64,
    pub analytic: f64,
}

impl LossComparison {
    /// `net/analytic − 1`
    pub fn excess(&self) -> f64 {
        self.net / self.analytic - 1.0
    }
}

pub fn compare_with_analytic(
    net: &MlpScoreNet,
    prior: &GmmPrior,
    n: usize,
    weighting: Weighting,
    seed: u64,
) -> Result<LossComparison, ToyError> {
    use crate::priors::{emulate_ve_network, emulate_vp_network, AnalyticScore, ScoreFunction};
    use crate::schedule::ScheduleKind;
    use std::sync::Arc;

    let schedule = net.noise_schedule().clone();
    let direct = Arc::new(AnalyticScore::new(Arc::new(prior.clone())));
    let exact: Box<dyn ScoreFunction> = match schedule.kind() {
        ScheduleKind::Ve => Box::new(emulate_ve_network(direct, schedule.clone())?),
        ScheduleKind::Vp => Box::new(emulate_vp_network(direct, schedule.clone())?),
    };
    let samples = draw_samples(prior, n, seed);
    let mut rng = GaussianStream::new(crate::rng::derive_seed(seed, &[2]));
    let batch = DsmBatch::draw(&samples, &schedule, &mut rng)?;
    Ok(LossComparison {
        net: net.loss(&batch, weighting)?,
        analytic: dsm_loss(exact.as_ref(), &batch, &schedule, weighting)?,
    })
}
