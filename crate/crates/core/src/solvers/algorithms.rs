use std::time::Instant;

use super::{CgOptions, Init, Method, QuadraticDataTerm, RedVariant, SolverConfig, SolverError, SolverState, TraceRow};
use crate::adaptation::{AdaptError, Denoiser, ParamMatch};
use crate::imaging::ImageTensor;
use crate::metrics::psnr;
use crate::priors::Convention;
use crate::rng::GaussianStream;

/// Runs the method named in `cfg` (after filling unset parameters from the
/// defaults). `truth`, when given, adds PSNR to the trace.
pub fn solve(
    dt: &QuadraticDataTerm,
    denoiser: &dyn Denoiser,
    cfg: &SolverConfig,
    truth: Option<&ImageTensor>,
) -> Result<SolverState, SolverError> {
    let cfg = cfg.resolved();
    match cfg.method {
        Method::PnpAdmm => pnp_admm(dt, denoiser, &cfg, truth),
        Method::Red => red(dt, denoiser, &cfg, truth),
        Method::Dpir => dpir_hqs(dt, denoiser, &cfg, truth),
        Method::Diffpir => diffpir_sample(dt, denoiser, &cfg, truth),
    }
}

struct Run<'a> {
    dt: &'a QuadraticDataTerm,
    denoiser: &'a dyn Denoiser,
    cfg: &'a SolverConfig,
    truth: Option<&'a ImageTensor>,
    levels: Vec<f64>,
    trace: Vec<TraceRow>,
}

impl<'a> Run<'a> {
    fn new(
        dt: &'a QuadraticDataTerm,
        denoiser: &'a dyn Denoiser,
        cfg: &'a SolverConfig,
        truth: Option<&'a ImageTensor>,
        method: Method,
    ) -> Result<Self, SolverError> {
        if cfg.method != method {
            return Err(SolverError::Config(format!("expected a {method} config, got {}", cfg.method)));
        }
        cfg.validate()?;
        if let Some(t) = truth {
            t.check_same_shape(dt.adjoint_y())?;
        }
        Ok(Self {
            dt,
            denoiser,
            cfg,
            truth,
            levels: cfg.sigma_levels()?,
            trace: Vec::with_capacity(cfg.iterations),
        })
    }

    fn init(&self) -> ImageTensor {
        match self.cfg.init {
            Init::Adjoint => self.dt.adjoint_y().clone(),
            Init::Zeros => ImageTensor::zeros(self.dt.adjoint_y().shape()),
        }
    }

    fn resolve(&self, k: usize, sigma: f64) -> Result<ParamMatch, SolverError> {
        let m = self.denoiser.resolve(sigma).map_err(|source| SolverError::Denoiser { k, source })?;
        if m.clamped && self.cfg.strict_range {
            return Err(SolverError::Denoiser {
                k,
                source: AdaptError::Parameter(format!(
                    "noise level {sigma} was clamped to {} under a strict range policy",
                    m.sigma_achieved
                )),
            });
        }
        Ok(m)
    }

    fn denoise(&self, k: usize, x: &ImageTensor, m: &ParamMatch) -> Result<ImageTensor, SolverError> {
        self.denoiser.denoise_at(x, m).map_err(|source| SolverError::Denoiser { k, source })
    }

    fn prox(&self, v: &ImageTensor, gamma: f64) -> Result<ImageTensor, SolverError> {
        self.dt.prox_with(v, gamma, self.cfg.prox, CgOptions::default())
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        k: usize,
        m: &ParamMatch,
        gamma: f64,
        iterates: [(&'static str, &ImageTensor); 3],
        estimate: &ImageTensor,
        residual: f64,
        started: Instant,
    ) -> Result<(), SolverError> {
        for (what, v) in iterates {
            if let Some(index) = v.first_non_finite() {
                return Err(SolverError::NonFinite { k, what, index });
            }
        }
        let psnr = match self.truth {
            Some(t) => Some(psnr(estimate, t, 1.0)?.db),
            None => None,
        };
        let objective = self.dt.value(estimate)?;
        self.trace.push(TraceRow {
            k,
            sigma_k: self.levels[k - 1],
            sigma_achieved: m.sigma_achieved,
            t_cond: m.t_cond,
            gamma_k: gamma,
            residual,
            psnr,
            objective,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        Ok(())
    }

    fn finish(self, method: Method, x: ImageTensor, z: ImageTensor, s: ImageTensor) -> SolverState {
        SolverState {
            method,
            k: self.trace.len(),
            x,
            z,
            s,
            trace: self.trace,
        }
    }
}

/// PnP-ADMM. `s` is the scaled dual variable; the estimate is `z_K`.
pub fn pnp_admm(
    dt: &QuadraticDataTerm,
    denoiser: &dyn Denoiser,
    cfg: &SolverConfig,
    truth: Option<&ImageTensor>,
) -> Result<SolverState, SolverError> {
    let mut run = Run::new(dt, denoiser, cfg, truth, Method::PnpAdmm)?;
    let gamma_rule = cfg.gamma.expect("validated");
    let scale = cfg.data_scale()?;
    let mut z = run.init();
    let mut s = ImageTensor::zeros(z.shape());
    let mut x = z.clone();
    for k in 1..=cfg.iterations {
        let started = Instant::now();
        let sigma = run.levels[k - 1];
        let gamma = scale * gamma_rule.at(sigma);
        x = run.prox(&z.sub(&s)?, gamma)?;
        let m = run.resolve(k, sigma)?;
        z = run.denoise(k, &x.add(&s)?, &m)?;
        s.axpy(1.0, &x)?;
        s.axpy(-1.0, &z)?;
        let residual = x.distance(&z)?;
        run.record(k, &m, gamma, [("x", &x), ("z", &z), ("s", &s)], &z, residual, started)?;
    }
    Ok(run.finish(Method::PnpAdmm, x, z, s))
}

/// RED steepest descent. The estimate is `x_K`.
pub fn red(
    dt: &QuadraticDataTerm,
    denoiser: &dyn Denoiser,
    cfg: &SolverConfig,
    truth: Option<&ImageTensor>,
) -> Result<SolverState, SolverError> {
    let mut run = Run::new(dt, denoiser, cfg, truth, Method::Red)?;
    let gamma_rule = cfg.gamma.expect("validated");
    let tau = cfg.tau.expect("validated");
    let scale = cfg.data_scale()?;
    let mut s = run.init();
    let mut x = s.clone();
    let mut z = s.clone();
    for k in 1..=cfg.iterations {
        let started = Instant::now();
        let sigma = run.levels[k - 1];
        let gamma = gamma_rule.at(sigma);
        x = s.clone();
        x.axpy(-scale * gamma, &dt.grad(&s)?)?;
        let m = run.resolve(k, sigma)?;
        z = match cfg.red_variant {
            RedVariant::Step => run.denoise(k, &x, &m)?,
            RedVariant::Gradient => run.denoise(k, &s, &m)?,
        };
        let step = s.sub(&z)?;
        s = x.clone();
        s.axpy(-gamma * tau, &step)?;
        let residual = x.distance(&z)?;
        run.record(k, &m, scale * gamma, [("x", &x), ("z", &z), ("s", &s)], &x, residual, started)?;
    }
    Ok(run.finish(Method::Red, x, z, s))
}

/// DPIR-style half-quadratic splitting with `γ_k = σ_k²/λ`. The estimate is
/// `z_K`; `s` holds `x_K`.
pub fn dpir_hqs(
    dt: &QuadraticDataTerm,
    denoiser: &dyn Denoiser,
    cfg: &SolverConfig,
    truth: Option<&ImageTensor>,
) -> Result<SolverState, SolverError> {
    let mut run = Run::new(dt, denoiser, cfg, truth, Method::Dpir)?;
    let lambda = cfg.lambda.expect("validated");
    let scale = cfg.data_scale()?;
    let mut z = run.init();
    let mut x = z.clone();
    for k in 1..=cfg.iterations {
        let started = Instant::now();
        let sigma = run.levels[k - 1];
        let gamma = scale * sigma * sigma / lambda;
        x = run.prox(&z, gamma)?;
        let m = run.resolve(k, sigma)?;
        z = run.denoise(k, &x, &m)?;
        let residual = x.distance(&z)?;
        run.record(k, &m, gamma, [("x", &x), ("z", &z), ("x", &x)], &z, residual, started)?;
    }
    let s = x.clone();
    Ok(run.finish(Method::Dpir, x, z, s))
}

/// DiffPIR-style sampler over the levels `σ_1 > … > σ_K`. Needs a denoiser
/// built from a VP model and `noise_sigma` (σ_e). On return `x` is the
/// sample, `z` the last denoised estimate `x̂₀` and `s` the noise direction
/// `ε̂` of the last step.
pub fn diffpir_sample(
    dt: &QuadraticDataTerm,
    denoiser: &dyn Denoiser,
    cfg: &SolverConfig,
    truth: Option<&ImageTensor>,
) -> Result<SolverState, SolverError> {
    let mut run = Run::new(dt, denoiser, cfg, truth, Method::Diffpir)?;
    if denoiser.convention() != Some(Convention::Vp) {
        return Err(SolverError::Config(
            "diffpir needs a denoiser built from a VP model with a schedule".into(),
        ));
    }
    let lambda = cfg.lambda.expect("validated");
    let zeta = cfg.zeta.expect("validated");
    let scale = cfg.data_scale()?;
    let keep = (1.0 - zeta * zeta).sqrt();
    let mut rng = GaussianStream::new(cfg.seed);
    let shape = dt.adjoint_y().shape();
    let mut fresh = vec![0.0; shape.len()];
    let mut draw = |rng: &mut GaussianStream| -> Result<ImageTensor, SolverError> {
        rng.fill_normal(&mut fresh);
        Ok(ImageTensor::new(shape, fresh.clone())?)
    };

    let mut x = run.init();
    if zeta > 0.0 {
        x.axpy(zeta * run.levels[0], &draw(&mut rng)?)?;
    }
    let mut z = x.clone();
    let mut eps = ImageTensor::zeros(shape);
    let n = cfg.iterations;
    for k in 1..=n {
        let started = Instant::now();
        let sigma = run.levels[k - 1];
        let m = run.resolve(k, sigma)?;
        z = run.denoise(k, &x, &m)?;
        let gamma = scale * sigma * sigma / lambda;
        let x_hat = run.prox(&z, gamma)?;
        eps = x.sub(&x_hat)?.scale(1.0 / sigma);
        x = x_hat;
        let residual = x.distance(&z)?;
        if k < n {
            let next = run.levels[k];
            let mut noisy = x.clone();
            noisy.axpy(next * keep, &eps)?;
            if zeta > 0.0 {
                noisy.axpy(next * zeta, &draw(&mut rng)?)?;
            }
            run.record(k, &m, gamma, [("x", &noisy), ("z", &z), ("s", &eps)], &x, residual, started)?;
            x = noisy;
        } else {
            run.record(k, &m, gamma, [("x", &x), ("z", &z), ("s", &eps)], &x, residual, started)?;
        }
    }
    Ok(run.finish(Method::Diffpir, x, z, eps))
}
