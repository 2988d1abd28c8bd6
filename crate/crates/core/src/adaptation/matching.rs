use serde::{Deserialize, Serialize};

use super::AdaptError;
use crate::schedule::{InterpolatedSchedule, NoiseSchedule, ScheduleKind};

/// What to do with a requested σ outside the achievable range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangePolicy {
    /// Fail with [`AdaptError::Range`].
    #[default]
    Strict,
    /// Clamp to the nearest endpoint and log a warning.
    Lenient,
}

/// Conditioning parameters for one requested noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamMatch {
    pub sigma_requested: f64,
    /// Signal scale applied before the score call.
    pub c: f64,
    /// Condition passed to the score model.
    pub t_cond: f64,
    /// Noise level the conditioning actually corresponds to.
    pub sigma_achieved: f64,
    /// Matched index in the extended sequence, 1-based (0 when unused).
    pub t_prime: usize,
    /// Extended-sequence level at `t_prime`.
    pub sigma_interp: f64,
    /// The request was outside the range and got clamped.
    pub clamped: bool,
}

impl ParamMatch {
    /// Parameters for a score model conditioned on σ directly.
    pub fn direct(sigma: f64) -> Self {
        Self {
            sigma_requested: sigma,
            c: 1.0,
            t_cond: sigma,
            sigma_achieved: sigma,
            t_prime: 0,
            sigma_interp: sigma,
            clamped: false,
        }
    }
}

/// Maps requested noise levels onto a schedule's conditioning inputs.
///
/// The native schedule is extended to `T′` levels (default `10·T`), index
/// `j` sitting at native time `τ = T·j/T′`. A request picks the `j` whose
/// level is nearest (ties toward the smaller `j`) among `τ ≥ 1`, so only the
/// trained range is ever used.
///
/// * VE models only accept grid indices: `t_cond` is the native index nearest
///   to `τ` (halves round down), `c = 1`, `σ_achieved = σ_{t_cond}`.
/// * VP models accept real time: `t_cond = τ`, `c = √ᾱ(τ)`,
///   `σ_achieved = σ(τ)`.
#[derive(Debug, Clone)]
pub struct ParamMatcher {
    schedule: NoiseSchedule,
    extended: InterpolatedSchedule,
    first: usize,
    policy: RangePolicy,
}

impl ParamMatcher {
    pub fn new(schedule: NoiseSchedule, t_prime: Option<usize>, policy: RangePolicy) -> Result<Self, AdaptError> {
        let t = schedule.len();
        let t_prime = t_prime.unwrap_or(10 * t);
        let extended = schedule.interpolate(t_prime)?;
        let first = t_prime.div_ceil(t);
        Ok(Self {
            schedule,
            extended,
            first,
            policy,
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn extended(&self) -> &InterpolatedSchedule {
        &self.extended
    }

    pub fn policy(&self) -> RangePolicy {
        self.policy
    }

    pub fn with_policy(mut self, policy: RangePolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Smallest and largest levels a request can match.
    pub fn range(&self) -> (f64, f64) {
        (self.extended.sigma(self.first), self.extended.sigma(self.extended.len()))
    }

    pub fn match_sigma(&self, sigma: f64) -> Result<ParamMatch, AdaptError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(AdaptError::Parameter(format!("noise level must be positive, got {sigma}")));
        }
        let (lo, hi) = self.range();
        let mut target = sigma;
        let mut clamped = false;
        if sigma < lo || sigma > hi {
            match self.policy {
                RangePolicy::Strict => return Err(AdaptError::Range { sigma, min: lo, max: hi }),
                RangePolicy::Lenient => {
                    target = sigma.clamp(lo, hi);
                    clamped = true;
                    log::warn!("noise level {sigma} outside [{lo}, {hi}], clamped to {target}");
                }
            }
        }
        let j = self.nearest(target);
        let sigma_interp = self.extended.sigma(j);
        let tau = self.extended.time(j);
        let (c, t_cond, sigma_achieved) = match self.schedule.kind() {
            ScheduleKind::Ve => {
                let t = ((tau - 0.5).ceil() as usize).clamp(1, self.schedule.len());
                (1.0, t as f64, self.schedule.sigma(t)?)
            }
            ScheduleKind::Vp => (self.schedule.scale_at_time(tau)?, tau, sigma_interp),
        };
        Ok(ParamMatch {
            sigma_requested: sigma,
            c,
            t_cond,
            sigma_achieved,
            t_prime: j,
            sigma_interp,
            clamped,
        })
    }

    fn nearest(&self, target: f64) -> usize {
        let s = &self.extended.sigmas()[self.first - 1..];
        let k = s.partition_point(|v| *v < target);
        let i = if k == 0 {
            0
        } else if k == s.len() {
            s.len() - 1
        } else if target - s[k - 1] <= s[k] - target {
            k - 1
        } else {
            k
        };
        i + self.first
    }
}

/// One-shot matching; build a [`ParamMatcher`] to match many levels.
pub fn param_matching(
    schedule: &NoiseSchedule,
    sigma: f64,
    t_prime: Option<usize>,
    policy: RangePolicy,
) -> Result<ParamMatch, AdaptError> {
    ParamMatcher::new(schedule.clone(), t_prime, policy)?.match_sigma(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GaussianStream;
    use proptest::prelude::*;

    fn ddpm() -> NoiseSchedule {
        NoiseSchedule::vp_linear(1e-4, 0.02, 1000).unwrap()
    }

    #[test]
    fn ve_exact_hit() {
        let s = NoiseSchedule::ve_geometric(0.01, 50.0, 100).unwrap();
        let sig5 = s.sigma(5).unwrap();
        let m = param_matching(&s, sig5, None, RangePolicy::Strict).unwrap();
        assert_eq!((m.c, m.t_cond, m.sigma_achieved), (1.0, 5.0, sig5));
        assert_eq!(m.t_prime, 50);
    }

    #[test]
    fn vp_exact_hit_uses_native_alpha_bar() {
        let s = ddpm();
        for t in [1, 2, 37, 500, 1000] {
            let sig = s.sigma(t).unwrap();
            let m = param_matching(&s, sig, None, RangePolicy::Strict).unwrap();
            assert_eq!(m.t_cond, t as f64);
            assert_eq!(m.c, s.alpha_bar(t).unwrap().sqrt());
            assert_eq!(m.sigma_achieved, sig);
        }
    }

    #[test]
    fn vp_t_cond_formula_spot_value() {
        // σ = 0.5 on the DDPM schedule: the nearest extended index j gives
        // t_cond = T·j/T′ = j/10
        let s = ddpm();
        let m = param_matching(&s, 0.5, None, RangePolicy::Strict).unwrap();
        let ext = s.interpolate(10_000).unwrap();
        let j = (10..=10_000)
            .min_by(|a, b| (ext.sigma(*a) - 0.5).abs().total_cmp(&(ext.sigma(*b) - 0.5).abs()))
            .unwrap();
        assert_eq!(m.t_prime, j);
        assert_eq!(m.t_cond, 1000.0 * j as f64 / 10_000.0);
        // independent recomputation: j = 1452, σ(145.2) = 0.50017411201467
        assert_eq!(m.t_prime, 1452);
        assert_eq!(m.t_cond, 145.2);
        assert!((m.sigma_achieved - 0.500_174_112_014_673_1).abs() < 1e-12);
        assert!((m.c - 0.894_364_894_455_016_4).abs() < 1e-12);
        let c2 = m.c * m.c;
        assert!(((1.0 - c2) / c2 - m.sigma_achieved.powi(2)).abs() < 1e-13);
    }

    #[test]
    fn range_policies() {
        let s = NoiseSchedule::ve(vec![0.1, 0.2, 0.4]).unwrap();
        let top = 1.5 * 0.4;
        assert!(matches!(
            param_matching(&s, top, None, RangePolicy::Strict),
            Err(AdaptError::Range { .. })
        ));
        let m = param_matching(&s, top, None, RangePolicy::Lenient).unwrap();
        assert!(m.clamped);
        assert_eq!((m.t_cond, m.sigma_achieved, m.sigma_requested), (3.0, 0.4, top));
        let m = param_matching(&s, 0.01, None, RangePolicy::Lenient).unwrap();
        assert_eq!((m.t_cond, m.sigma_achieved), (1.0, 0.1));
        assert!(param_matching(&s, 0.0, None, RangePolicy::Lenient).is_err());
        assert!(param_matching(&s, 0.3, Some(2), RangePolicy::Strict).is_err());
    }

    #[test]
    fn ties_break_toward_smaller_index() {
        let s = NoiseSchedule::ve(vec![0.25, 0.75]).unwrap();
        // T' = T: extended levels are the native ones; 0.5 is equidistant
        let m = param_matching(&s, 0.5, Some(2), RangePolicy::Strict).unwrap();
        assert_eq!(m.t_prime, 1);
        assert_eq!(m.t_cond, 1.0);
    }

    #[test]
    fn vp_round_trip_within_half_step() {
        let s = ddpm();
        let matcher = ParamMatcher::new(s, None, RangePolicy::Strict).unwrap();
        let (lo, hi) = matcher.range();
        let mut rng = GaussianStream::new(31);
        for _ in 0..100 {
            let target = lo * (hi / lo).powf(rng.uniform());
            let m = matcher.match_sigma(target).unwrap();
            let again = matcher.schedule().sigma_at_time(m.t_cond).unwrap();
            assert_eq!(again, m.sigma_achieved);
            assert!((again - target).abs() <= 0.5 * matcher.extended().local_spacing(m.t_prime));
        }
    }

    proptest! {
        #[test]
        fn monotone_in_sigma(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let s = ddpm();
            let matcher = ParamMatcher::new(s, None, RangePolicy::Strict).unwrap();
            let (lo, hi) = matcher.range();
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            let sa = lo * (hi / lo).powf(a);
            let sb = lo * (hi / lo).powf(b);
            let ma = matcher.match_sigma(sa).unwrap();
            let mb = matcher.match_sigma(sb).unwrap();
            prop_assert!(ma.t_prime <= mb.t_prime);
            prop_assert!(ma.t_cond <= mb.t_cond);
        }
    }
}
