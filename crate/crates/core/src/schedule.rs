//! Diffusion noise schedules.
//!
//! A schedule fixes the native noise levels `σ_t`, `t = 1..T`, of a score
//! model. VE schedules list them directly; VP schedules derive them from the
//! β sequence through `ᾱ_t = Π_{s≤t} (1 − β_s)` and `σ_t = √((1 − ᾱ_t)/ᾱ_t)`.
//!
//! Both kinds extend to a continuous time `τ ∈ [0, T]`: integer times are the
//! native levels, time 0 is the clean signal (`σ = 0`, scale 1), and levels in
//! between are interpolated linearly in σ (or in log σ for `τ ≥ 1` when
//! [`Interpolation::Log`] is selected). The VP scale at a fractional time is
//! `c = 1/√(1 + σ²)`, which keeps `σ² = (1 − c²)/c²` exact.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Ve,
    Vp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule: {0}")]
    Invalid(String),
    #[error("index {t} outside 1..={len}")]
    IndexOutOfRange { t: usize, len: usize },
    #[error("time {t} outside [0, {max}]")]
    TimeOutOfRange { t: f64, max: f64 },
    #[error("expected a {expected:?} schedule, found {found:?}")]
    WrongKind {
        expected: ScheduleKind,
        found: ScheduleKind,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    sigmas: Vec<f64>,
    betas: Option<Vec<f64>>,
    alpha_bars: Option<Vec<f64>>,
    interpolation: Interpolation,
}

impl NoiseSchedule {
    /// VE schedule from strictly increasing positive levels.
    pub fn ve(sigmas: Vec<f64>) -> Result<Self, ScheduleError> {
        if sigmas.is_empty() {
            return Err(ScheduleError::Invalid("empty sigma sequence".into()));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(ScheduleError::Invalid("sigmas must be finite and positive".into()));
        }
        if let Some(i) = sigmas.windows(2).position(|w| w[1] <= w[0]) {
            return Err(ScheduleError::Invalid(format!(
                "sigmas must be strictly increasing (t={} -> t={})",
                i + 1,
                i + 2
            )));
        }
        Ok(Self {
            kind: ScheduleKind::Ve,
            sigmas,
            betas: None,
            alpha_bars: None,
            interpolation: Interpolation::Linear,
        })
    }

    /// Geometric VE levels from `sigma_min` to `sigma_max` (both exact).
    pub fn ve_geometric(sigma_min: f64, sigma_max: f64, steps: usize) -> Result<Self, ScheduleError> {
        if !(sigma_min > 0.0 && sigma_max > sigma_min) || steps < 2 {
            return Err(ScheduleError::Parameter(format!(
                "need 0 < sigma_min < sigma_max and steps >= 2, got {sigma_min}, {sigma_max}, {steps}"
            )));
        }
        Self::ve(geometric(sigma_max, sigma_min, steps).into_iter().rev().collect())
    }

    /// VP schedule from β values in `(0, 1)`.
    pub fn vp(betas: Vec<f64>) -> Result<Self, ScheduleError> {
        if betas.is_empty() {
            return Err(ScheduleError::Invalid("empty beta sequence".into()));
        }
        if let Some(i) = betas.iter().position(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(ScheduleError::Invalid(format!(
                "beta_{} = {} is outside (0, 1)",
                i + 1,
                betas[i]
            )));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        if let Some(i) = alpha_bars.iter().position(|a| *a <= 0.0) {
            return Err(ScheduleError::Invalid(format!("alpha_bar underflows at t={}", i + 1)));
        }
        let sigmas: Vec<f64> = alpha_bars.iter().map(|a| ((1.0 - a) / a).sqrt()).collect();
        if let Some(i) = sigmas.windows(2).position(|w| w[1] <= w[0]) {
            return Err(ScheduleError::Invalid(format!(
                "derived sigma is not strictly increasing at t={}",
                i + 2
            )));
        }
        Ok(Self {
            kind: ScheduleKind::Vp,
            sigmas,
            betas: Some(betas),
            alpha_bars: Some(alpha_bars),
            interpolation: Interpolation::Linear,
        })
    }

    /// DDPM-style linear β schedule.
    pub fn vp_linear(beta_start: f64, beta_end: f64, steps: usize) -> Result<Self, ScheduleError> {
        if steps < 2 {
            return Err(ScheduleError::Parameter("steps must be >= 2".into()));
        }
        let betas = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        Self::vp(betas)
    }

    /// VP schedule whose derived levels equal `sigmas` (up to rounding):
    /// `ᾱ_t = 1/(1 + σ_t²)` and `β_t = 1 − ᾱ_t/ᾱ_{t−1}`.
    pub fn vp_from_sigmas(sigmas: &[f64]) -> Result<Self, ScheduleError> {
        let mut prev = 1.0;
        let mut betas = Vec::with_capacity(sigmas.len());
        for s in sigmas {
            let ab = 1.0 / (1.0 + s * s);
            betas.push(1.0 - ab / prev);
            prev = ab;
        }
        Self::vp(betas)
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Self {
        self.interpolation = interpolation;
        self
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    /// Number of native steps `T`.
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    /// Native levels `σ_1..σ_T`.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn betas(&self) -> Option<&[f64]> {
        self.betas.as_deref()
    }

    pub fn alpha_bars(&self) -> Option<&[f64]> {
        self.alpha_bars.as_deref()
    }

    /// `(σ_1, σ_T)`
    pub fn sigma_range(&self) -> (f64, f64) {
        (self.sigmas[0], self.sigmas[self.sigmas.len() - 1])
    }

    fn check_index(&self, t: usize) -> Result<usize, ScheduleError> {
        if t == 0 || t > self.len() {
            return Err(ScheduleError::IndexOutOfRange { t, len: self.len() });
        }
        Ok(t - 1)
    }

    /// Native level `σ_t`, 1-based.
    pub fn sigma(&self, t: usize) -> Result<f64, ScheduleError> {
        Ok(self.sigmas[self.check_index(t)?])
    }

    /// `ᾱ_t`, 1-based (VP only).
    pub fn alpha_bar(&self, t: usize) -> Result<f64, ScheduleError> {
        let i = self.check_index(t)?;
        match &self.alpha_bars {
            Some(a) => Ok(a[i]),
            None => Err(ScheduleError::WrongKind {
                expected: ScheduleKind::Vp,
                found: self.kind,
            }),
        }
    }

    fn check_time(&self, tau: f64) -> Result<(), ScheduleError> {
        let max = self.len() as f64;
        if !(tau >= 0.0 && tau <= max) {
            return Err(ScheduleError::TimeOutOfRange { t: tau, max });
        }
        Ok(())
    }

    /// Noise level at continuous time `τ ∈ [0, T]`.
    pub fn sigma_at_time(&self, tau: f64) -> Result<f64, ScheduleError> {
        self.check_time(tau)?;
        if tau.fract() == 0.0 {
            let t = tau as usize;
            return Ok(if t == 0 { 0.0 } else { self.sigmas[t - 1] });
        }
        if tau < 1.0 {
            return Ok(tau * self.sigmas[0]);
        }
        let lo = tau.floor() as usize;
        let w = tau - lo as f64;
        let (a, b) = (self.sigmas[lo - 1], self.sigmas[lo]);
        Ok(match self.interpolation {
            Interpolation::Linear => a + w * (b - a),
            Interpolation::Log => (a.ln() + w * (b.ln() - a.ln())).exp(),
        })
    }

    /// Signal scale `c` at continuous time `τ`: 1 for VE, `√ᾱ` for VP.
    pub fn scale_at_time(&self, tau: f64) -> Result<f64, ScheduleError> {
        self.check_time(tau)?;
        match (&self.alpha_bars, self.kind) {
            (_, ScheduleKind::Ve) | (None, _) => Ok(1.0),
            (Some(ab), ScheduleKind::Vp) => {
                if tau.fract() == 0.0 && tau >= 1.0 {
                    Ok(ab[tau as usize - 1].sqrt())
                } else {
                    let s = self.sigma_at_time(tau)?;
                    Ok(1.0 / (1.0 + s * s).sqrt())
                }
            }
        }
    }

    /// Extended sequence of `t_prime` levels. Extended index `j` (1-based)
    /// sits at native time `τ_j = T·j/T′`, so `j = T′` is `σ_T` and, whenever
    /// `T` divides `T′`, every native level appears exactly. `t_prime == T`
    /// returns the native sequence.
    pub fn interpolate(&self, t_prime: usize) -> Result<InterpolatedSchedule, ScheduleError> {
        let t = self.len();
        if t_prime < t {
            return Err(ScheduleError::Parameter(format!(
                "T' = {t_prime} must not be smaller than T = {t}"
            )));
        }
        let mut times = Vec::with_capacity(t_prime);
        let mut sigmas = Vec::with_capacity(t_prime);
        for j in 1..=t_prime {
            let tau = (t * j) as f64 / t_prime as f64;
            times.push(tau);
            sigmas.push(self.sigma_at_time(tau)?);
        }
        Ok(InterpolatedSchedule {
            native_len: t,
            times,
            sigmas,
        })
    }

    pub fn to_spec(&self) -> ScheduleSpec {
        match self.kind {
            ScheduleKind::Ve => ScheduleSpec::Ve {
                sigmas: Some(self.sigmas.clone()),
                geometric: None,
                interpolation: self.interpolation,
            },
            ScheduleKind::Vp => ScheduleSpec::Vp {
                betas: self.betas.clone(),
                linear: None,
                sigmas: None,
                interpolation: self.interpolation,
            },
        }
    }

    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self, ScheduleError> {
        spec.build()
    }

    /// Reads a JSON schedule file in the [`ScheduleSpec`] format.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ScheduleError> {
        let path = path.as_ref();
        let fail = |e: &dyn std::fmt::Display| ScheduleError::Invalid(format!("{}: {e}", path.display()));
        let text = std::fs::read_to_string(path).map_err(|e| fail(&e))?;
        let spec: ScheduleSpec = serde_json::from_str(&text).map_err(|e| fail(&e))?;
        spec.build()
    }
}

/// `√((1 − ᾱ_t)/ᾱ_t)` for a VP schedule, 1-based.
pub fn vp_sigma_of_t(schedule: &NoiseSchedule, t: usize) -> Result<f64, ScheduleError> {
    let ab = schedule.alpha_bar(t)?;
    Ok(((1.0 - ab) / ab).sqrt())
}

/// Extended noise sequence used for parameter matching.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedSchedule {
    native_len: usize,
    times: Vec<f64>,
    sigmas: Vec<f64>,
}

impl InterpolatedSchedule {
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn native_len(&self) -> usize {
        self.native_len
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Native time of extended index `j` (1-based), `T·j/T′`.
    pub fn time(&self, j: usize) -> f64 {
        self.times[j - 1]
    }

    pub fn sigma(&self, j: usize) -> f64 {
        self.sigmas[j - 1]
    }

    /// Largest gap between extended index `j` and its neighbours.
    pub fn local_spacing(&self, j: usize) -> f64 {
        let i = j - 1;
        let mut gap: f64 = 0.0;
        if i > 0 {
            gap = gap.max(self.sigmas[i] - self.sigmas[i - 1]);
        }
        if i + 1 < self.sigmas.len() {
            gap = gap.max(self.sigmas[i + 1] - self.sigmas[i]);
        }
        gap
    }
}

/// Geometric sequence from `first` to `last` with both endpoints exact.
pub(crate) fn geometric(first: f64, last: f64, n: usize) -> Vec<f64> {
    let ratio = (last / first).ln();
    let mut v: Vec<f64> = (0..n)
        .map(|k| first * (ratio * k as f64 / (n - 1) as f64).exp())
        .collect();
    v[0] = first;
    v[n - 1] = last;
    v
}

/// Serialized schedule (JSON file format).
///
/// ```json
/// {"kind": "ve", "sigmas": [0.01, 0.02, 0.04]}
/// {"kind": "ve", "geometric": {"sigma_min": 0.01, "sigma_max": 50.0, "steps": 1000}}
/// {"kind": "vp", "betas": [0.0001, 0.0002]}
/// {"kind": "vp", "linear": {"beta_start": 0.0001, "beta_end": 0.02, "steps": 1000}}
/// {"kind": "vp", "sigmas": [0.01, 0.1, 1.0]}
/// ```
///
/// An optional `"interpolation": "linear" | "log"` applies to any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleSpec {
    Ve {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigmas: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        geometric: Option<GeometricSpec>,
        #[serde(default)]
        interpolation: Interpolation,
    },
    Vp {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        betas: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        linear: Option<LinearBetaSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigmas: Option<Vec<f64>>,
        #[serde(default)]
        interpolation: Interpolation,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometricSpec {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearBetaSpec {
    pub beta_start: f64,
    pub beta_end: f64,
    pub steps: usize,
}

impl Default for ScheduleSpec {
    /// DDPM linear schedule, β from 1e-4 to 0.02 over 1000 steps.
    fn default() -> Self {
        ScheduleSpec::Vp {
            betas: None,
            linear: Some(LinearBetaSpec {
                beta_start: 1e-4,
                beta_end: 0.02,
                steps: 1000,
            }),
            sigmas: None,
            interpolation: Interpolation::Linear,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule, ScheduleError> {
        let one_of = |n: usize| {
            if n != 1 {
                Err(ScheduleError::Invalid(
                    "exactly one sequence source must be given".into(),
                ))
            } else {
                Ok(())
            }
        };
        match self {
            ScheduleSpec::Ve {
                sigmas,
                geometric,
                interpolation,
            } => {
                one_of(sigmas.is_some() as usize + geometric.is_some() as usize)?;
                let s = match (sigmas, geometric) {
                    (Some(s), _) => NoiseSchedule::ve(s.clone())?,
                    (_, Some(g)) => NoiseSchedule::ve_geometric(g.sigma_min, g.sigma_max, g.steps)?,
                    _ => unreachable!(),
                };
                Ok(s.with_interpolation(*interpolation))
            }
            ScheduleSpec::Vp {
                betas,
                linear,
                sigmas,
                interpolation,
            } => {
                one_of(betas.is_some() as usize + linear.is_some() as usize + sigmas.is_some() as usize)?;
                let s = match (betas, linear, sigmas) {
                    (Some(b), _, _) => NoiseSchedule::vp(b.clone())?,
                    (_, Some(l), _) => NoiseSchedule::vp_linear(l.beta_start, l.beta_end, l.steps)?,
                    (_, _, Some(s)) => NoiseSchedule::vp_from_sigmas(s)?,
                    _ => unreachable!(),
                };
                Ok(s.with_interpolation(*interpolation))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ve_validation() {
        assert!(NoiseSchedule::ve(vec![0.1, 0.1]).is_err());
        assert!(NoiseSchedule::ve(vec![0.2, 0.1]).is_err());
        assert!(NoiseSchedule::ve(vec![0.0, 0.1]).is_err());
        assert!(NoiseSchedule::ve(vec![]).is_err());
        assert!(NoiseSchedule::ve(vec![0.1, 0.3]).is_ok());
    }

    #[test]
    fn vp_validation() {
        assert!(NoiseSchedule::vp(vec![0.1, 1.0]).is_err());
        assert!(NoiseSchedule::vp(vec![0.0, 0.1]).is_err());
        let s = NoiseSchedule::vp(vec![0.5, 0.5]).unwrap();
        assert_eq!(s.alpha_bars().unwrap(), &[0.5, 0.25]);
    }

    #[test]
    fn vp_sigma_of_half_alpha_bar_is_one() {
        let s = NoiseSchedule::vp(vec![0.5]).unwrap();
        assert_eq!(vp_sigma_of_t(&s, 1).unwrap(), 1.0);
        assert!(vp_sigma_of_t(&s, 0).is_err());
        assert!(vp_sigma_of_t(&s, 2).is_err());
        let ve = NoiseSchedule::ve(vec![1.0]).unwrap();
        assert!(matches!(vp_sigma_of_t(&ve, 1), Err(ScheduleError::WrongKind { .. })));
    }

    #[test]
    fn ddpm_first_level() {
        let s = NoiseSchedule::vp_linear(1e-4, 0.02, 1000).unwrap();
        let b1: f64 = 1e-4;
        let expected = (b1 / (1.0 - b1)).sqrt();
        assert!((vp_sigma_of_t(&s, 1).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.010000500037503).abs() < 1e-12);
        assert!(s.sigmas().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn vp_from_sigmas_recovers_levels() {
        let target = geometric(0.01, 5.0, 50);
        let s = NoiseSchedule::vp_from_sigmas(&target).unwrap();
        for (a, b) in s.sigmas().iter().zip(&target) {
            assert!((a / b - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn continuous_time() {
        let s = NoiseSchedule::ve(vec![0.1, 0.3]).unwrap();
        assert_eq!(s.sigma_at_time(0.0).unwrap(), 0.0);
        assert_eq!(s.sigma_at_time(1.0).unwrap(), 0.1);
        assert!((s.sigma_at_time(1.5).unwrap() - 0.2).abs() < 1e-15);
        assert!((s.sigma_at_time(0.5).unwrap() - 0.05).abs() < 1e-15);
        assert!(s.sigma_at_time(2.5).is_err());
        assert!(s.sigma_at_time(-0.1).is_err());
        let l = s.clone().with_interpolation(Interpolation::Log);
        assert!((l.sigma_at_time(1.5).unwrap() - (0.03f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn vp_scale_consistency() {
        let s = NoiseSchedule::vp_linear(1e-3, 0.05, 20).unwrap();
        for t in 1..=20 {
            let c = s.scale_at_time(t as f64).unwrap();
            assert_eq!(c, s.alpha_bar(t).unwrap().sqrt());
        }
        let tau = 7.25;
        let c = s.scale_at_time(tau).unwrap();
        let sig = s.sigma_at_time(tau).unwrap();
        assert!(((1.0 - c * c) / (c * c) - sig * sig).abs() < 1e-14);
    }

    #[test]
    fn interpolate_identity_and_top_endpoint() {
        let s = NoiseSchedule::ve(vec![0.1, 0.2, 0.5, 0.9]).unwrap();
        let same = s.interpolate(4).unwrap();
        assert_eq!(same.sigmas(), s.sigmas());
        let ext = s.interpolate(40).unwrap();
        assert_eq!(ext.sigma(40), 0.9);
        // native levels land on multiples of T'/T
        for t in 1..=4 {
            assert_eq!(ext.sigma(10 * t), s.sigma(t).unwrap());
            assert_eq!(ext.time(10 * t), t as f64);
        }
        assert!(s.interpolate(3).is_err());
    }

    #[test]
    fn interpolate_midpoint() {
        let s = NoiseSchedule::ve(vec![0.1, 0.3]).unwrap();
        let ext = s.interpolate(4).unwrap();
        assert_eq!(ext.sigma(2), 0.1);
        assert!((ext.sigma(3) - 0.2).abs() < 1e-15);
        assert_eq!(ext.sigma(4), 0.3);
    }

    #[test]
    fn spec_round_trip() {
        let spec: ScheduleSpec = serde_json::from_str(
            r#"{"kind":"vp","linear":{"beta_start":0.0001,"beta_end":0.02,"steps":1000}}"#,
        )
        .unwrap();
        let s = spec.build().unwrap();
        assert_eq!(s.len(), 1000);
        let again = NoiseSchedule::from_spec(&s.to_spec()).unwrap();
        assert_eq!(again, s);
        let bad: ScheduleSpec =
            serde_json::from_str(r#"{"kind":"ve","sigmas":[0.1],"geometric":{"sigma_min":0.1,"sigma_max":1,"steps":3}}"#)
                .unwrap();
        assert!(bad.build().is_err());
    }

    proptest! {
        #[test]
        fn interpolation_preserves_monotonicity(
            increments in prop::collection::vec(1e-4f64..1.0, 2..40),
            factor in 1usize..12,
            extra in 0usize..7,
            log in any::<bool>(),
        ) {
            let mut acc = 0.0;
            let sigmas: Vec<f64> = increments.iter().map(|d| { acc += d; acc }).collect();
            let interp = if log { Interpolation::Log } else { Interpolation::Linear };
            let s = NoiseSchedule::ve(sigmas.clone()).unwrap().with_interpolation(interp);
            let ext = s.interpolate(factor * sigmas.len() + extra).unwrap();
            prop_assert!(ext.sigmas().windows(2).all(|w| w[1] > w[0]));
            prop_assert_eq!(ext.sigma(ext.len()), *sigmas.last().unwrap());
        }
    }
}
