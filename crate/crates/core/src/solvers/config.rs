use serde::{Deserialize, Serialize};

use super::{ProxMethod, SolverError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PnpAdmm,
    Red,
    Dpir,
    Diffpir,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::PnpAdmm, Method::Red, Method::Dpir, Method::Diffpir];

    pub fn name(&self) -> &'static str {
        match self {
            Method::PnpAdmm => "pnp-admm",
            Method::Red => "red",
            Method::Dpir => "dpir",
            Method::Diffpir => "diffpir",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Prox weight per iteration: a constant, or `c/σ_k²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaRule {
    Fixed(f64),
    OverSigmaSq { over_sigma_sq: f64 },
}

impl GammaRule {
    pub fn at(&self, sigma: f64) -> f64 {
        match *self {
            GammaRule::Fixed(g) => g,
            GammaRule::OverSigmaSq { over_sigma_sq } => over_sigma_sq / (sigma * sigma),
        }
    }

    fn coefficient(&self) -> f64 {
        match *self {
            GammaRule::Fixed(g) => g,
            GammaRule::OverSigmaSq { over_sigma_sq } => over_sigma_sq,
        }
    }
}

/// Denoiser noise level per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSchedule {
    Fixed(f64),
    /// Geometric from `from` (first iteration) down to `to` (last).
    LogSpaced { from: f64, to: f64 },
}

impl SigmaSchedule {
    pub fn levels(&self, iterations: usize) -> Result<Vec<f64>, SolverError> {
        match *self {
            SigmaSchedule::Fixed(s) => {
                if !(s.is_finite() && s >= 0.0) {
                    return Err(SolverError::Config(format!("sigma must be nonnegative, got {s}")));
                }
                Ok(vec![s; iterations])
            }
            SigmaSchedule::LogSpaced { from, to } if iterations == 1 && from == to => Ok(vec![from]),
            SigmaSchedule::LogSpaced { from, to } => make_log_sigma_schedule(from, to, iterations),
        }
    }
}

/// Geometric sequence from `sigma1` down to `sigma_k`, endpoints exact.
pub fn make_log_sigma_schedule(sigma1: f64, sigma_k: f64, k: usize) -> Result<Vec<f64>, SolverError> {
    if k < 2 {
        return Err(SolverError::Config(format!("a log schedule needs K >= 2, got {k}")));
    }
    if !(sigma_k > 0.0 && sigma1 >= sigma_k && sigma1.is_finite()) {
        return Err(SolverError::Config(format!(
            "need sigma1 >= sigmaK > 0, got {sigma1} and {sigma_k}"
        )));
    }
    Ok(crate::schedule::geometric(sigma1, sigma_k, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RedVariant {
    /// Denoise the fresh gradient step: `z_k = D(x_k)`.
    #[default]
    Step,
    /// Denoise the previous iterate: `z_k = D(s_{k−1})`, i.e. steepest
    /// descent on `g` with the RED gradient `τ(s − D(s))`.
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Start from `Aᵀy`.
    #[default]
    Adjoint,
    Zeros,
}

/// Units of the γ (or λ) parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    /// γ weighs `g = ½‖y − Ax‖²` as given.
    Raw,
    /// γ weighs the negative log-likelihood `‖y − Ax‖²/(2σ_e²)`, so the
    /// applied weight is `γ/σ_e²`. Needs `noise_sigma`.
    Likelihood,
}

/// Denoiser parameter family for [`SolverConfig::preset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Score-based denoisers.
    Sbm,
    /// Classical CNN denoisers.
    Classical,
}

fn default_iterations() -> usize {
    100
}

fn yes() -> bool {
    true
}

/// Parameters of one solver run. Unset method parameters take the
/// [`Preset::Sbm`] values when the config is [resolved](SolverConfig::resolved).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<SigmaSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub strict_range: bool,
    #[serde(default)]
    pub red_variant: RedVariant,
    #[serde(default)]
    pub init: Init,
    #[serde(default)]
    pub prox: ProxMethod,
    /// Measurement noise level σ_e (used by DiffPIR).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    /// Units of γ; DiffPIR defaults to likelihood, the others to raw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<Fidelity>,
    /// Length of the extended noise sequence for parameter matching.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_prime: Option<usize>,
}

impl SolverConfig {
    /// Published settings for `method`, `K = 100`.
    pub fn preset(method: Method, preset: Preset) -> Self {
        let mut c = Self {
            method,
            iterations: 100,
            gamma: None,
            tau: None,
            lambda: None,
            sigma: None,
            zeta: None,
            seed: 0,
            strict_range: true,
            red_variant: RedVariant::Step,
            init: Init::Adjoint,
            prox: ProxMethod::Exact,
            noise_sigma: None,
            fidelity: None,
            t_prime: None,
        };
        let px = |v: f64| v / 255.0;
        match (method, preset) {
            (Method::Dpir, Preset::Classical) => {
                c.lambda = Some(0.27);
                c.sigma = Some(SigmaSchedule::LogSpaced { from: px(49.0), to: px(5.0) });
            }
            (Method::Dpir, Preset::Sbm) => {
                c.lambda = Some(0.27);
                c.sigma = Some(SigmaSchedule::LogSpaced { from: px(130.0), to: px(3.0) });
            }
            (Method::Red, Preset::Classical) => {
                c.gamma = Some(GammaRule::Fixed(0.91));
                c.tau = Some(1.1);
                c.sigma = Some(SigmaSchedule::Fixed(px(2.0)));
            }
            (Method::Red, Preset::Sbm) => {
                c.gamma = Some(GammaRule::Fixed(0.28));
                c.tau = Some(3.57);
                c.sigma = Some(SigmaSchedule::Fixed(px(5.0)));
            }
            (Method::PnpAdmm, Preset::Classical) => {
                c.gamma = Some(GammaRule::Fixed(0.97));
                c.sigma = Some(SigmaSchedule::Fixed(px(2.0)));
            }
            (Method::PnpAdmm, Preset::Sbm) => {
                c.gamma = Some(GammaRule::OverSigmaSq { over_sigma_sq: 0.43 });
                c.sigma = Some(SigmaSchedule::LogSpaced { from: px(120.0), to: px(10.0) });
            }
            (Method::Diffpir, _) => {
                c.fidelity = Some(Fidelity::Likelihood);
                c.lambda = Some(3.0);
                c.zeta = Some(0.9);
                // ends inside the DDPM range, whose smallest level is about 0.01
                c.sigma = Some(SigmaSchedule::LogSpaced { from: 1.0, to: px(4.0) });
            }
        }
        c
    }

    /// Copy with every unset method parameter filled from the SBM preset.
    pub fn resolved(&self) -> Self {
        let p = Self::preset(self.method, Preset::Sbm);
        let mut c = self.clone();
        let uses = |m: &[Method]| m.contains(&self.method);
        if uses(&[Method::PnpAdmm, Method::Red]) {
            c.gamma = c.gamma.or(p.gamma);
        }
        if uses(&[Method::Red]) {
            c.tau = c.tau.or(p.tau);
        }
        if uses(&[Method::Dpir, Method::Diffpir]) {
            c.lambda = c.lambda.or(p.lambda);
        }
        if uses(&[Method::Diffpir]) {
            c.zeta = c.zeta.or(p.zeta);
        }
        c.sigma = c.sigma.or(p.sigma);
        c.fidelity = c.fidelity.or(p.fidelity).or(Some(Fidelity::Raw));
        c
    }

    /// Factor turning the configured γ into the weight on `½‖y − Ax‖²`.
    pub fn data_scale(&self) -> Result<f64, SolverError> {
        let default = match self.method {
            Method::Diffpir => Fidelity::Likelihood,
            _ => Fidelity::Raw,
        };
        match self.fidelity.unwrap_or(default) {
            Fidelity::Raw => Ok(1.0),
            Fidelity::Likelihood => match self.noise_sigma {
                Some(s) if s.is_finite() && s > 0.0 => Ok(1.0 / (s * s)),
                other => Err(SolverError::Config(format!(
                    "likelihood fidelity needs a positive noise_sigma, got {other:?}"
                ))),
            },
        }
    }

    /// Checks a resolved config.
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        let positive = |name: &str, v: Option<f64>| -> Result<f64, SolverError> {
            match v {
                Some(x) if x.is_finite() && x > 0.0 => Ok(x),
                Some(x) => Err(SolverError::Config(format!("{name} must be positive, got {x}"))),
                None => Err(SolverError::Config(format!("{} needs {name}", self.method))),
            }
        };
        match self.method {
            Method::PnpAdmm => {
                positive("gamma", self.gamma.map(|g| g.coefficient()))?;
            }
            Method::Red => {
                positive("gamma", self.gamma.map(|g| g.coefficient()))?;
                if let Some(t) = self.tau {
                    if !(t.is_finite() && t >= 0.0) {
                        return bad(format!("tau must be nonnegative, got {t}"));
                    }
                } else {
                    return bad("red needs tau".into());
                }
            }
            Method::Dpir => {
                positive("lambda", self.lambda)?;
            }
            Method::Diffpir => {
                positive("lambda", self.lambda)?;
                match self.zeta {
                    Some(z) if (0.0..=1.0).contains(&z) => {}
                    other => return bad(format!("zeta must be in [0, 1], got {other:?}")),
                }
                positive("noise_sigma", self.noise_sigma)?;
            }
        }
        self.data_scale()?;
        let sigma = self
            .sigma
            .ok_or_else(|| SolverError::Config(format!("{} needs a sigma schedule", self.method)))?;
        let levels = sigma.levels(self.iterations)?;
        if matches!(self.method, Method::Dpir | Method::Diffpir) && levels.iter().any(|s| *s <= 0.0) {
            return bad("noise levels must be positive".into());
        }
        if self.gamma.is_some_and(|g| matches!(g, GammaRule::OverSigmaSq { .. })) && levels.iter().any(|s| *s <= 0.0) {
            return bad("gamma = c/sigma^2 needs positive noise levels".into());
        }
        if self.t_prime == Some(0) {
            return bad("t_prime must be positive".into());
        }
        Ok(())
    }

    pub fn sigma_levels(&self) -> Result<Vec<f64>, SolverError> {
        self.sigma
            .ok_or_else(|| SolverError::Config(format!("{} needs a sigma schedule", self.method)))?
            .levels(self.iterations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_schedule() {
        assert_eq!(make_log_sigma_schedule(0.4, 0.1, 2).unwrap(), vec![0.4, 0.1]);
        let s = make_log_sigma_schedule(0.4, 0.1, 3).unwrap();
        assert!((s[1] - 0.2).abs() < 1e-15);
        let s = make_log_sigma_schedule(130.0 / 255.0, 3.0 / 255.0, 100).unwrap();
        assert_eq!((s[0], s[99]), (130.0 / 255.0, 3.0 / 255.0));
        let r0 = s[1] / s[0];
        for w in s.windows(2) {
            assert!((w[1] / w[0] - r0).abs() < 1e-12);
        }
        assert!(make_log_sigma_schedule(0.1, 0.4, 3).is_err());
        assert!(make_log_sigma_schedule(0.4, 0.1, 1).is_err());
        assert!(make_log_sigma_schedule(0.4, 0.0, 3).is_err());
    }

    #[test]
    fn published_presets() {
        let c = SolverConfig::preset(Method::PnpAdmm, Preset::Sbm);
        assert_eq!(c.gamma, Some(GammaRule::OverSigmaSq { over_sigma_sq: 0.43 }));
        assert_eq!(c.sigma, Some(SigmaSchedule::LogSpaced { from: 120.0 / 255.0, to: 10.0 / 255.0 }));
        let c = SolverConfig::preset(Method::Red, Preset::Sbm);
        assert_eq!((c.gamma, c.tau), (Some(GammaRule::Fixed(0.28)), Some(3.57)));
        assert_eq!(c.sigma, Some(SigmaSchedule::Fixed(5.0 / 255.0)));
        let c = SolverConfig::preset(Method::Dpir, Preset::Classical);
        assert_eq!(c.lambda, Some(0.27));
        assert_eq!(c.sigma, Some(SigmaSchedule::LogSpaced { from: 49.0 / 255.0, to: 5.0 / 255.0 }));
        let c = SolverConfig::preset(Method::Dpir, Preset::Sbm);
        assert_eq!(c.sigma, Some(SigmaSchedule::LogSpaced { from: 130.0 / 255.0, to: 3.0 / 255.0 }));
        let c = SolverConfig::preset(Method::Diffpir, Preset::Sbm);
        assert_eq!((c.lambda, c.zeta), (Some(3.0), Some(0.9)));
        assert_eq!(c.iterations, 100);
    }

    #[test]
    fn toml_round_trip_and_resolution() {
        let c: SolverConfig = toml::from_str(
            r#"
            method = "pnp-admm"
            gamma = { over_sigma_sq = 0.43 }
            sigma = { from = 0.47, to = 0.039 }
            "#,
        )
        .unwrap();
        assert_eq!(c.iterations, 100);
        assert!(c.strict_range);
        let back: SolverConfig = toml::from_str(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);

        let c: SolverConfig = toml::from_str("method = \"red\"\ngamma = 0.5").unwrap();
        let r = c.resolved();
        assert_eq!(r.gamma, Some(GammaRule::Fixed(0.5)));
        assert_eq!(r.tau, Some(3.57));
        assert!(r.validate().is_ok());
        assert!(toml::from_str::<SolverConfig>("method = \"red\"\nbogus = 1").is_err());
    }

    #[test]
    fn fidelity_scales_the_data_weight() {
        let mut c = SolverConfig::preset(Method::Dpir, Preset::Sbm).resolved();
        assert_eq!(c.fidelity, Some(Fidelity::Raw));
        assert_eq!(c.data_scale().unwrap(), 1.0);
        c.fidelity = Some(Fidelity::Likelihood);
        assert!(c.validate().is_err(), "likelihood without noise_sigma");
        c.noise_sigma = Some(0.02);
        assert!((c.data_scale().unwrap() - 2500.0).abs() < 1e-9);
        let d = SolverConfig::preset(Method::Diffpir, Preset::Sbm).resolved();
        assert_eq!(d.fidelity, Some(Fidelity::Likelihood));
        let c: SolverConfig = toml::from_str("method = \"red\"\nfidelity = \"likelihood\"").unwrap();
        assert_eq!(c.fidelity, Some(Fidelity::Likelihood));
    }

    #[test]
    fn validation() {
        let mut c = SolverConfig::preset(Method::Diffpir, Preset::Sbm);
        assert!(c.validate().is_err(), "diffpir without noise_sigma");
        c.noise_sigma = Some(0.02);
        assert!(c.validate().is_ok());
        c.zeta = Some(1.5);
        assert!(c.validate().is_err());
        let mut c = SolverConfig::preset(Method::Dpir, Preset::Sbm);
        c.iterations = 0;
        assert!(c.validate().is_err());
        let mut c = SolverConfig::preset(Method::Dpir, Preset::Sbm);
        c.sigma = Some(SigmaSchedule::LogSpaced { from: 0.1, to: 0.2 });
        assert!(c.validate().is_err());
    }
}
