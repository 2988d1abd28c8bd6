//! Wrappers that make a noise-level-direct score look like a pretrained
//! diffusion network.

use std::sync::Arc;

use super::{Convention, PriorError, ScoreFunction, ValueDomain};
use crate::imaging::ImageTensor;
use crate::schedule::{NoiseSchedule, ScheduleKind};

fn require_direct(inner: &dyn ScoreFunction) -> Result<(), PriorError> {
    if inner.convention() != Convention::NoiseLevelDirect {
        return Err(PriorError::Convention(format!(
            "emulators wrap noise-level-direct scores, got {}",
            inner.convention()
        )));
    }
    Ok(())
}

/// `s(x, t) = ∇log p_{σ_t}(x)`, defined on the integer grid `t ∈ {1..T}` only.
#[derive(Clone)]
pub struct VeEmulator {
    inner: Arc<dyn ScoreFunction>,
    schedule: NoiseSchedule,
}

/// `s(z, t) = (1/c)·∇log p_σ(z/c)` with `c = √ᾱ(t)` and `σ = σ(t)`, i.e. the
/// score of `c·(x₀ + σ w)`. Real `t ∈ [0, T]`; fractional times use the
/// schedule's continuous-time extension.
#[derive(Clone)]
pub struct VpEmulator {
    inner: Arc<dyn ScoreFunction>,
    schedule: NoiseSchedule,
}

pub fn emulate_ve_network(
    inner: Arc<dyn ScoreFunction>,
    schedule: NoiseSchedule,
) -> Result<VeEmulator, PriorError> {
    require_direct(inner.as_ref())?;
    if schedule.kind() != ScheduleKind::Ve {
        return Err(PriorError::Convention("VE emulator needs a VE schedule".into()));
    }
    Ok(VeEmulator { inner, schedule })
}

pub fn emulate_vp_network(
    inner: Arc<dyn ScoreFunction>,
    schedule: NoiseSchedule,
) -> Result<VpEmulator, PriorError> {
    require_direct(inner.as_ref())?;
    if schedule.kind() != ScheduleKind::Vp {
        return Err(PriorError::Convention("VP emulator needs a VP schedule".into()));
    }
    Ok(VpEmulator { inner, schedule })
}

impl VeEmulator {
    fn level(&self, t: f64) -> Result<f64, PriorError> {
        let max = self.schedule.len();
        if !(t.fract() == 0.0 && t >= 1.0 && t <= max as f64) {
            return Err(PriorError::Condition(format!("VE time {t} is not a grid index in 1..={max}")));
        }
        Ok(self.schedule.sigma(t as usize)?)
    }
}

impl ScoreFunction for VeEmulator {
    fn convention(&self) -> Convention {
        Convention::Ve
    }

    fn schedule(&self) -> Option<&NoiseSchedule> {
        Some(&self.schedule)
    }

    fn input_domain(&self) -> ValueDomain {
        self.inner.input_domain()
    }

    fn score(&self, x: &ImageTensor, t: f64) -> Result<ImageTensor, PriorError> {
        self.inner.score(x, self.level(t)?)
    }

    fn score_batch(&self, xs: &[ImageTensor], t: f64) -> Result<Vec<ImageTensor>, PriorError> {
        self.inner.score_batch(xs, self.level(t)?)
    }
}

impl VpEmulator {
    fn level(&self, t: f64) -> Result<(f64, f64), PriorError> {
        let max = self.schedule.len() as f64;
        if !(t >= 0.0 && t <= max) {
            return Err(PriorError::Condition(format!("VP time {t} outside [0, {max}]")));
        }
        Ok((self.schedule.scale_at_time(t)?, self.schedule.sigma_at_time(t)?))
    }
}

impl ScoreFunction for VpEmulator {
    fn convention(&self) -> Convention {
        Convention::Vp
    }

    fn schedule(&self) -> Option<&NoiseSchedule> {
        Some(&self.schedule)
    }

    fn input_domain(&self) -> ValueDomain {
        self.inner.input_domain()
    }

    fn score(&self, z: &ImageTensor, t: f64) -> Result<ImageTensor, PriorError> {
        let (c, sigma) = self.level(t)?;
        Ok(self.inner.score(&z.scale(1.0 / c), sigma)?.scale(1.0 / c))
    }

    fn score_batch(&self, zs: &[ImageTensor], t: f64) -> Result<Vec<ImageTensor>, PriorError> {
        let (c, sigma) = self.level(t)?;
        let scaled: Vec<ImageTensor> = zs.iter().map(|z| z.scale(1.0 / c)).collect();
        Ok(self
            .inner
            .score_batch(&scaled, sigma)?
            .into_iter()
            .map(|s| s.scale(1.0 / c))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Shape;
    use crate::priors::testing::random_gmm;
    use crate::priors::{gmm_score, AnalyticScore, GaussianPrior};
    use crate::rng::GaussianStream;

    fn vec_tensor(v: Vec<f64>) -> ImageTensor {
        ImageTensor::new(Shape::new(1, v.len(), 1), v).unwrap()
    }

    #[test]
    fn ve_matches_analytic_on_grid() {
        let gmm = random_gmm(2, 3, 9);
        let inner = Arc::new(AnalyticScore::new(Arc::new(gmm.clone())));
        let sched = NoiseSchedule::ve_geometric(0.01, 2.0, 10).unwrap();
        let e = emulate_ve_network(inner, sched.clone()).unwrap();
        let x = vec_tensor(vec![0.3, -0.7]);
        for t in 1..=10 {
            let got = e.score(&x, t as f64).unwrap();
            let want = gmm_score(&gmm, x.as_slice(), sched.sigma(t).unwrap()).unwrap();
            assert_eq!(got.as_slice(), want.as_slice());
        }
        assert!(matches!(e.score(&x, 2.5), Err(PriorError::Condition(_))));
        assert!(matches!(e.score(&x, 0.0), Err(PriorError::Condition(_))));
        assert!(matches!(e.score(&x, 11.0), Err(PriorError::Condition(_))));
    }

    #[test]
    fn convention_checks() {
        let inner: Arc<dyn ScoreFunction> = Arc::new(AnalyticScore::new(Arc::new(random_gmm(2, 2, 1))));
        let ve = NoiseSchedule::ve(vec![0.1, 0.2]).unwrap();
        let vp = NoiseSchedule::vp(vec![0.1, 0.2]).unwrap();
        assert!(emulate_ve_network(inner.clone(), vp.clone()).is_err());
        assert!(emulate_vp_network(inner.clone(), ve.clone()).is_err());
        let wrapped: Arc<dyn ScoreFunction> = Arc::new(emulate_vp_network(inner, vp.clone()).unwrap());
        assert!(emulate_vp_network(wrapped, vp).is_err());
    }

    #[test]
    fn vp_standard_gaussian_score_is_minus_z() {
        let g = GaussianPrior::new(vec![0.0; 3], 1.0).unwrap();
        let inner = Arc::new(AnalyticScore::new(Arc::new(g)));
        let sched = NoiseSchedule::vp_linear(1e-4, 0.02, 1000).unwrap();
        let e = emulate_vp_network(inner, sched).unwrap();
        let z = vec_tensor(vec![0.5, -1.5, 2.0]);
        for t in [1.0, 10.0, 500.0, 1000.0, 333.3] {
            let s = e.score(&z, t).unwrap();
            for (a, b) in s.as_slice().iter().zip(z.as_slice()) {
                assert!((a + b).abs() < 1e-12, "t={t}");
            }
        }
    }

    #[test]
    fn vp_time_zero_is_unscaled() {
        let gmm = random_gmm(2, 2, 3);
        let inner = Arc::new(AnalyticScore::new(Arc::new(gmm.clone())));
        let e = emulate_vp_network(inner, NoiseSchedule::vp_linear(1e-4, 0.02, 50).unwrap()).unwrap();
        let x = vec_tensor(vec![0.2, 0.4]);
        let want = gmm_score(&gmm, x.as_slice(), 0.0).unwrap();
        assert_eq!(e.score(&x, 0.0).unwrap().as_slice(), want.as_slice());
    }

    #[test]
    fn vp_scale_relation_on_every_grid_time() {
        let gmm = random_gmm(3, 3, 21);
        let inner = Arc::new(AnalyticScore::new(Arc::new(gmm.clone())));
        let sched = NoiseSchedule::vp_linear(1e-3, 0.05, 60).unwrap();
        let e = emulate_vp_network(inner, sched.clone()).unwrap();
        let mut rng = GaussianStream::new(8);
        for t in 1..=60 {
            let u = rng.normal_vec(3);
            let c = sched.alpha_bar(t).unwrap().sqrt();
            let sigma = crate::schedule::vp_sigma_of_t(&sched, t).unwrap();
            let lhs = e.score(&vec_tensor(u.iter().map(|v| c * v).collect()), t as f64).unwrap();
            let rhs = gmm_score(&gmm, &u, sigma).unwrap();
            for (a, b) in lhs.as_slice().iter().zip(&rhs) {
                assert!((a - b / c).abs() <= 1e-10 * (1.0 + b.abs() / c));
            }
        }
    }
}
