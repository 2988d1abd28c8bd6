use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::net::{Level, MlpScoreNet};
use super::ToyError;
use crate::imaging::{ImageTensor, Shape};
use crate::priors::ScoreFunction;
use crate::rng::GaussianStream;
use crate::schedule::{NoiseSchedule, ScheduleKind};

/// Per-sample weight of the score-matching residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// `‖s(z, t) + ε/(cσ)‖²`
    #[default]
    Unit,
    /// `(cσ)²·‖s(z, t) + ε/(cσ)‖²`, the usual training objective.
    SigmaSquared,
}

/// Fixed draws for one evaluation of the DSM objective: clean samples,
/// times on the schedule grid and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmBatch {
    pub dim: usize,
    /// `n × d`, row-major.
    pub clean: Vec<f64>,
    pub t: Vec<f64>,
    /// `n × d`, row-major.
    pub noise: Vec<f64>,
}

impl DsmBatch {
    /// One time index drawn uniformly from `1..=T` per sample.
    pub fn draw(samples: &[Vec<f64>], schedule: &NoiseSchedule, rng: &mut GaussianStream) -> Result<Self, ToyError> {
        let dim = sample_dim(samples)?;
        let mut b = Self::empty(dim);
        for x in samples {
            b.clean.extend_from_slice(x);
            b.t.push((rng.below(schedule.len()) + 1) as f64);
            b.noise.extend(rng.normal_vec(dim));
        }
        Ok(b)
    }

    /// `n` samples drawn from `pool` with stratified times and antithetic
    /// noise pairs `(ε, −ε)` sharing a clean sample and a time.
    pub fn training(
        pool: &[Vec<f64>],
        n: usize,
        schedule: &NoiseSchedule,
        rng: &mut GaussianStream,
    ) -> Result<Self, ToyError> {
        let dim = sample_dim(pool)?;
        let levels = schedule.len();
        let offset = rng.below(levels);
        let mut b = Self::empty(dim);
        for i in 0..n.div_ceil(2) {
            let x = &pool[rng.below(pool.len())];
            let t = ((offset + i) % levels + 1) as f64;
            let eps = rng.normal_vec(dim);
            for sign in [1.0, -1.0] {
                if b.t.len() == n {
                    break;
                }
                b.clean.extend_from_slice(x);
                b.t.push(t);
                b.noise.extend(eps.iter().map(|e| sign * e));
            }
        }
        Ok(b)
    }

    fn empty(dim: usize) -> Self {
        Self {
            dim,
            clean: Vec::new(),
            t: Vec::new(),
            noise: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn concat(&self, other: &DsmBatch) -> DsmBatch {
        let mut b = self.clone();
        b.clean.extend_from_slice(&other.clean);
        b.t.extend_from_slice(&other.t);
        b.noise.extend_from_slice(&other.noise);
        b
    }
}

fn sample_dim(samples: &[Vec<f64>]) -> Result<usize, ToyError> {
    let dim = samples.first().map(|s| s.len()).unwrap_or(0);
    if dim == 0 || samples.iter().any(|s| s.len() != dim) {
        return Err(ToyError::Config("samples must be nonempty vectors of one length".into()));
    }
    Ok(dim)
}

fn level_of(schedule: &NoiseSchedule, t: f64) -> Result<(f64, f64), ToyError> {
    Ok((schedule.scale_at_time(t)?, schedule.sigma_at_time(t)?))
}

fn weight(w: Weighting, c: f64, sigma: f64) -> f64 {
    match w {
        Weighting::Unit => 1.0,
        Weighting::SigmaSquared => (c * sigma).powi(2),
    }
}

/// Mean of `w·‖s(c(x + σε), t) + ε/(cσ)‖²` over the batch, for any score
/// model following the schedule's convention.
pub fn dsm_loss(
    score: &dyn ScoreFunction,
    batch: &DsmBatch,
    schedule: &NoiseSchedule,
    weighting: Weighting,
) -> Result<f64, ToyError> {
    if batch.is_empty() {
        return Err(ToyError::Config("empty batch".into()));
    }
    let d = batch.dim;
    // group samples by time so each level is one batched call
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|a, b| batch.t[*a].total_cmp(&batch.t[*b]));
    let mut total = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = batch.t[order[i]];
        let mut j = i;
        while j < order.len() && batch.t[order[j]] == t {
            j += 1;
        }
        let (c, sigma) = level_of(schedule, t)?;
        let group = &order[i..j];
        let inputs: Vec<ImageTensor> = group
            .iter()
            .map(|&k| {
                let z: Vec<f64> = (0..d)
                    .map(|m| c * (batch.clean[k * d + m] + sigma * batch.noise[k * d + m]))
                    .collect();
                ImageTensor::new(Shape::new(1, d, 1), z)
            })
            .collect::<Result<_, _>>()?;
        let out = score.score_batch(&inputs, t)?;
        let w = weight(weighting, c, sigma);
        for (&k, s) in group.iter().zip(&out) {
            let r: f64 = s
                .as_slice()
                .iter()
                .enumerate()
                .map(|(m, sv)| (sv + batch.noise[k * d + m] / (c * sigma)).powi(2))
                .sum();
            total += w * r;
        }
        i = j;
    }
    Ok(total / batch.len() as f64)
}

impl MlpScoreNet {
    /// DSM loss of this network and its parameter gradient.
    pub fn loss_and_grad(&self, batch: &DsmBatch, weighting: Weighting) -> Result<(f64, Vec<f64>), ToyError> {
        let (loss, g_f, fw) = self.residuals(batch, weighting)?;
        Ok((loss, self.backward(&fw, &g_f)))
    }

    pub fn loss(&self, batch: &DsmBatch, weighting: Weighting) -> Result<f64, ToyError> {
        Ok(self.residuals(batch, weighting)?.0)
    }

    fn residuals(
        &self,
        batch: &DsmBatch,
        weighting: Weighting,
    ) -> Result<(f64, Array2<f64>, super::net::Forward), ToyError> {
        let d = self.dim();
        if batch.dim != d || batch.is_empty() {
            return Err(ToyError::Config(format!(
                "batch of {} samples of dimension {} for a {d}-dimensional net",
                batch.len(),
                batch.dim
            )));
        }
        let n = batch.len();
        let levels: Vec<Level> = batch.t.iter().map(|t| self.level(*t)).collect::<Result<_, _>>()?;
        let xt = Array2::from_shape_fn((n, d), |(i, j)| {
            batch.clean[i * d + j] + levels[i].sigma * batch.noise[i * d + j]
        });
        let fw = self.forward(&xt, &levels);
        // the residual s + ε/(cσ) equals (f + ε)/(cσ)
        let mut loss = 0.0;
        let mut g = Array2::zeros((n, d));
        for (i, lv) in levels.iter().enumerate() {
            let cs = lv.c * lv.sigma;
            let w = weight(weighting, lv.c, lv.sigma) / (cs * cs);
            for j in 0..d {
                let r = fw.f[[i, j]] + batch.noise[i * d + j];
                loss += w * r * r;
                g[[i, j]] = 2.0 * w * r / n as f64;
            }
        }
        Ok((loss / n as f64, g, fw))
    }
}

/// Gradient check against central differences of step `h`. For each
/// weight matrix and bias vector `T` the error is `‖g_T − fd_T‖/max(‖g_T‖,
/// ‖fd_T‖)`; the largest over all blocks is returned. Blocks whose
/// gradients are both exactly zero count as matching.
pub fn grad_check(net: &MlpScoreNet, batch: &DsmBatch, weighting: Weighting, h: f64) -> Result<f64, ToyError> {
    let (_, g) = net.loss_and_grad(batch, weighting)?;
    let mut probe = net.clone();
    let mut fd = vec![0.0; g.len()];
    for (i, v) in fd.iter_mut().enumerate() {
        let base = net.params()[i];
        probe.params_mut()[i] = base + h;
        let up = probe.loss(batch, weighting)?;
        probe.params_mut()[i] = base - h;
        let down = probe.loss(batch, weighting)?;
        probe.params_mut()[i] = base;
        *v = (up - down) / (2.0 * h);
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut worst: f64 = 0.0;
    for block in net.parameter_blocks() {
        let (a, b) = (&g[block.clone()], &fd[block]);
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let scale = norm(a).max(norm(b));
        if scale > 0.0 {
            worst = worst.max(norm(&diff) / scale);
        }
    }
    Ok(worst)
}

fn default_steps() -> usize {
    30_000
}
fn default_batch() -> usize {
    512
}
fn default_lr() -> f64 {
    0.1
}
fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_ema() -> f64 {
    0.999
}
fn default_weighting() -> Weighting {
    Weighting::SigmaSquared
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsmTrainConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Upper bound of the parameter averaging decay
    /// `min(ema, (1 + i)/(10 + i))`; 0 returns the raw iterate.
    #[serde(default = "default_ema")]
    pub ema: f64,
    #[serde(default = "default_weighting")]
    pub weighting: Weighting,
}

impl Default for DsmTrainConfig {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            seed: 0,
            hidden: default_hidden(),
            ema: default_ema(),
            weighting: default_weighting(),
        }
    }
}

impl DsmTrainConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        if self.steps == 0 || self.batch_size == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(ToyError::Config("steps, batch size and widths must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ToyError::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.ema) {
            return Err(ToyError::Config(format!("ema must be in [0, 1), got {}", self.ema)));
        }
        Ok(())
    }
}

/// A trained network and its per-step minibatch losses.
#[derive(Debug, Clone)]
pub struct TrainedScore {
    pub net: MlpScoreNet,
    pub losses: Vec<f64>,
}

/// Minimum number of training samples.
pub const MIN_TRAINING_SAMPLES: usize = 10_000;

/// Plain SGD on the DSM objective. Returns the parameter average.
pub fn train_toy_score(
    samples: &[Vec<f64>],
    schedule: &NoiseSchedule,
    cfg: &DsmTrainConfig,
) -> Result<TrainedScore, ToyError> {
    cfg.validate()?;
    if samples.len() < MIN_TRAINING_SAMPLES {
        return Err(ToyError::Config(format!(
            "need at least {MIN_TRAINING_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let dim = sample_dim(samples)?;
    if !matches!(schedule.kind(), ScheduleKind::Ve | ScheduleKind::Vp) {
        return Err(ToyError::Config("unsupported schedule".into()));
    }
    let mut rng = GaussianStream::new(cfg.seed);
    let mut net = MlpScoreNet::new(dim, &cfg.hidden, schedule.clone(), crate::rng::derive_seed(cfg.seed, &[1]))?;
    let mut avg = net.params().to_vec();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = DsmBatch::training(samples, cfg.batch_size, schedule, &mut rng)?;
        let (loss, grad) = net.loss_and_grad(&batch, cfg.weighting)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ToyError::Diverged { step: step + 1, loss });
        }
        losses.push(loss);
        for (p, g) in net.params_mut().iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
        let decay = cfg.ema.min((1.0 + step as f64) / (10.0 + step as f64));
        for (a, p) in avg.iter_mut().zip(net.params()) {
            *a = decay * *a + (1.0 - decay) * p;
        }
    }
    let net = net.with_params(avg)?;
    Ok(TrainedScore { net, losses })
}

/// Means of consecutive non-overlapping windows.
pub fn window_means(values: &[f64], window: usize) -> Vec<f64> {
    values
        .chunks_exact(window.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// First window whose mean exceeds the previous window's mean by more than
/// `z` combined standard errors, if any. Windows are consecutive and
/// non-overlapping; the standard error of a window is its sample standard
/// deviation over `√window`.
pub fn first_significant_increase(values: &[f64], window: usize, z: f64) -> Option<usize> {
    let stats: Vec<(f64, f64)> = values
        .chunks_exact(window.max(2))
        .map(|c| {
            let n = c.len() as f64;
            let m = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
            (m, var / n)
        })
        .collect();
    stats
        .windows(2)
        .position(|p| p[1].0 - p[0].0 > z * (p[0].1 + p[1].1).sqrt())
        .map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{emulate_ve_network, AnalyticScore, GaussianPrior};
    use std::sync::Arc;

    fn ve() -> NoiseSchedule {
        NoiseSchedule::ve_geometric(0.05, 2.0, 10).unwrap()
    }

    fn vp() -> NoiseSchedule {
        NoiseSchedule::vp_from_sigmas(ve().sigmas()).unwrap()
    }

    fn random_net(schedule: NoiseSchedule, seed: u64) -> MlpScoreNet {
        let mut net = MlpScoreNet::new(2, &[8, 8], schedule, seed).unwrap();
        let mut rng = GaussianStream::new(seed + 100);
        for p in net.params_mut() {
            *p = 0.5 * rng.normal();
        }
        net
    }

    fn points(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = GaussianStream::new(seed);
        (0..n).map(|_| rng.normal_vec(2)).collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (schedule, w) in [
            (ve(), Weighting::Unit),
            (ve(), Weighting::SigmaSquared),
            (vp(), Weighting::Unit),
            (vp(), Weighting::SigmaSquared),
        ] {
            let net = random_net(schedule.clone(), 3);
            let batch = DsmBatch::draw(&points(16, 5), &schedule, &mut GaussianStream::new(7)).unwrap();
            let err = grad_check(&net, &batch, w, 1e-5).unwrap();
            assert!(err <= 1e-4, "{:?} {w:?}: {err}", schedule.kind());
        }
    }

    #[test]
    fn zero_net_bias_gradient_is_closed_form() {
        let schedule = ve();
        let net = MlpScoreNet::zeroed(2, &[4], schedule.clone()).unwrap();
        let batch = DsmBatch::draw(&points(6, 1), &schedule, &mut GaussianStream::new(2)).unwrap();
        let (_, g) = net.loss_and_grad(&batch, Weighting::SigmaSquared).unwrap();
        // all hidden activations vanish, so only the output bias moves:
        // ∂L/∂b = (2/n)·Σ (f_i + ε_i)/√(1 + σ_i²), f_i = −σ_i·x̃_i/(1 + σ_i²)
        let n = batch.len();
        let mut want = [0.0; 2];
        for i in 0..n {
            let sigma = schedule.sigma(batch.t[i] as usize).unwrap();
            let k = 1.0 / (1.0 + sigma * sigma);
            for j in 0..2 {
                let eps = batch.noise[i * 2 + j];
                let xt = batch.clean[i * 2 + j] + sigma * eps;
                want[j] += 2.0 / n as f64 * (-sigma * xt * k + eps) * k.sqrt();
            }
        }
        let count = g.len();
        assert!((g[count - 2] - want[0]).abs() < 1e-14 && (g[count - 1] - want[1]).abs() < 1e-14);
        assert!(g[..count - 2].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_samples_double_their_contribution() {
        let schedule = ve();
        let net = random_net(schedule.clone(), 4);
        let mut rng = GaussianStream::new(9);
        let a = DsmBatch::draw(&points(1, 10), &schedule, &mut rng).unwrap();
        let b = DsmBatch::draw(&points(1, 11), &schedule, &mut rng).unwrap();
        let (_, ga) = net.loss_and_grad(&a, Weighting::Unit).unwrap();
        let (_, gb) = net.loss_and_grad(&b, Weighting::Unit).unwrap();
        let (_, gaab) = net.loss_and_grad(&a.concat(&a).concat(&b), Weighting::Unit).unwrap();
        for i in 0..ga.len() {
            let want = (2.0 * ga[i] + gb[i]) / 3.0;
            assert!((gaab[i] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn loss_ignores_sample_order() {
        let schedule = vp();
        let net = random_net(schedule.clone(), 5);
        let batch = DsmBatch::draw(&points(20, 3), &schedule, &mut GaussianStream::new(4)).unwrap();
        let mut rev = batch.clone();
        let n = batch.len();
        for i in 0..n {
            let k = n - 1 - i;
            rev.t[i] = batch.t[k];
            rev.clean[2 * i..2 * i + 2].copy_from_slice(&batch.clean[2 * k..2 * k + 2]);
            rev.noise[2 * i..2 * i + 2].copy_from_slice(&batch.noise[2 * k..2 * k + 2]);
        }
        let a = net.loss(&batch, Weighting::Unit).unwrap();
        let b = net.loss(&rev, Weighting::Unit).unwrap();
        assert!((a - b).abs() <= 1e-12 * a);
        // the generic evaluator agrees with the network's own
        let c = dsm_loss(&net, &batch, &schedule, Weighting::Unit).unwrap();
        assert!((a - c).abs() <= 1e-12 * a);
    }

    #[test]
    fn zero_score_loss_is_dimension_over_sigma_squared() {
        // s ≡ 0 through a Gaussian prior with a huge spread
        struct Zero(NoiseSchedule);
        impl ScoreFunction for Zero {
            fn convention(&self) -> crate::priors::Convention {
                crate::priors::Convention::Ve
            }
            fn schedule(&self) -> Option<&NoiseSchedule> {
                Some(&self.0)
            }
            fn score(&self, x: &ImageTensor, _: f64) -> Result<ImageTensor, crate::priors::PriorError> {
                Ok(x.scale(0.0))
            }
        }
        let schedule = ve();
        let mut rng = GaussianStream::new(12);
        let batch = DsmBatch::draw(&points(200_000, 2), &schedule, &mut rng).unwrap();
        let got = dsm_loss(&Zero(schedule.clone()), &batch, &schedule, Weighting::Unit).unwrap();
        let want = schedule.sigmas().iter().map(|s| 2.0 / (s * s)).sum::<f64>() / schedule.len() as f64;
        // Monte Carlo over both t and ε: relative standard error ≈ 0.4%
        assert!((got / want - 1.0).abs() < 0.02, "{got} vs {want}");
    }

    #[test]
    fn analytic_score_beats_the_zero_baseline() {
        let schedule = ve();
        let g = GaussianPrior::new(vec![0.0, 0.0], 1.0).unwrap();
        let analytic = emulate_ve_network(Arc::new(AnalyticScore::new(Arc::new(g))), schedule.clone()).unwrap();
        let zero = MlpScoreNet::zeroed(2, &[4], schedule.clone()).unwrap();
        let batch = DsmBatch::draw(&points(50_000, 6), &schedule, &mut GaussianStream::new(1)).unwrap();
        // data are standard normal, so the zeroed net is the exact score
        let a = dsm_loss(&analytic, &batch, &schedule, Weighting::SigmaSquared).unwrap();
        let z = zero.loss(&batch, Weighting::SigmaSquared).unwrap();
        assert!((a - z).abs() < 1e-10 * a);
        // floor: E‖ε‖² − σ²·E‖s‖²·σ² averaged, i.e. 2 − 2·mean(σ²/(1 + σ²))
        let want = 2.0 - 2.0 * schedule.sigmas().iter().map(|s| s * s / (1.0 + s * s)).sum::<f64>() / 10.0;
        assert!((a / want - 1.0).abs() < 0.02, "{a} vs {want}");
    }

    #[test]
    fn training_is_deterministic_and_rejects_small_sets() {
        let schedule = ve();
        let data = points(10_000, 8);
        let cfg = DsmTrainConfig {
            steps: 20,
            batch_size: 32,
            hidden: vec![8],
            ..Default::default()
        };
        let a = train_toy_score(&data, &schedule, &cfg).unwrap();
        let b = train_toy_score(&data, &schedule, &cfg).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.losses, b.losses);
        let c = train_toy_score(&data, &schedule, &DsmTrainConfig { seed: 1, ..cfg.clone() }).unwrap();
        assert_ne!(a.net, c.net);
        assert!(matches!(train_toy_score(&data[..9_999], &schedule, &cfg), Err(ToyError::Config(_))));
    }

    #[test]
    fn divergence_reports_the_step() {
        let schedule = ve();
        let data: Vec<Vec<f64>> = points(10_000, 8).into_iter().map(|v| vec![v[0] * 1e200, v[1]]).collect();
        let cfg = DsmTrainConfig {
            steps: 50,
            batch_size: 16,
            hidden: vec![4],
            learning_rate: 1e10,
            ..Default::default()
        };
        match train_toy_score(&data, &schedule, &cfg) {
            Err(ToyError::Diverged { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn window_means_chunks() {
        assert_eq!(window_means(&[1.0, 3.0, 5.0, 7.0, 9.0], 2), vec![2.0, 6.0]);
    }

    #[test]
    fn significant_increases() {
        let mut rng = GaussianStream::new(3);
        let flat: Vec<f64> = (0..2000).map(|_| 1.0 + 0.1 * rng.normal()).collect();
        assert_eq!(first_significant_increase(&flat, 100, 4.0), None);
        let mut jump = flat.clone();
        for v in &mut jump[1000..] {
            *v += 0.2;
        }
        assert_eq!(first_significant_increase(&jump, 100, 4.0), Some(10));
    }
}
