use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::imaging::ImageTensor;
use crate::priors::{Convention, PriorError, ScoreFunction};
use crate::rng::GaussianStream;
use crate::schedule::{NoiseSchedule, ScheduleKind};

/// Fully connected score network with `tanh` hidden layers.
///
/// For a scaled input `z = c·x̃` at time `t` (with `c = 1`, `σ = σ(t)` for VE
/// and `c = √ᾱ(t)` for VP) the network returns
///
/// ```text
/// s(z, t) = f/(c·σ),   f = −σ·x̃/(1 + σ²) + F(x̃/√(1 + σ²), e(t))/√(1 + σ²)
/// ```
///
/// where `F` is the MLP and `e(t)` is `ln σ` (VE) or `t/T` (VP). With `F = 0`
/// the output is the exact score of standard normal data.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpScoreNet {
    dim: usize,
    hidden: Vec<usize>,
    schedule: NoiseSchedule,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: usize,
    b: usize,
    n_in: usize,
    n_out: usize,
}

/// Per-sample noise parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Level {
    pub c: f64,
    pub sigma: f64,
    pub embed: f64,
}

pub(crate) struct Forward {
    /// `acts[0]` is the input; `acts[l]` the output of hidden layer `l`.
    acts: Vec<Array2<f64>>,
    /// `f` per sample, `B × d`.
    pub f: Array2<f64>,
    inv_norm: Vec<f64>,
}

impl MlpScoreNet {
    /// Widths `dim + 1 → hidden… → dim`. Weights are `N(0, 1/fan_in)`,
    /// biases zero, and the output layer starts at zero.
    pub fn new(dim: usize, hidden: &[usize], schedule: NoiseSchedule, seed: u64) -> Result<Self, PriorError> {
        let mut net = Self::zeroed(dim, hidden, schedule)?;
        let mut rng = GaussianStream::new(seed);
        let layers = net.layers();
        for l in &layers[..layers.len() - 1] {
            let scale = 1.0 / (l.n_in as f64).sqrt();
            for v in &mut net.params[l.w..l.w + l.n_in * l.n_out] {
                *v = scale * rng.normal();
            }
        }
        Ok(net)
    }

    /// All parameters zero.
    pub fn zeroed(dim: usize, hidden: &[usize], schedule: NoiseSchedule) -> Result<Self, PriorError> {
        if dim == 0 || hidden.contains(&0) {
            return Err(PriorError::InvalidPrior("layer widths must be positive".into()));
        }
        let mut net = Self {
            dim,
            hidden: hidden.to_vec(),
            schedule,
            params: Vec::new(),
        };
        net.params = vec![0.0; net.parameter_count()];
        Ok(net)
    }

    /// Replaces the parameter vector.
    pub fn with_params(mut self, params: Vec<f64>) -> Result<Self, PriorError> {
        if params.len() != self.parameter_count() {
            return Err(PriorError::Dimension {
                expected: self.parameter_count(),
                found: params.len(),
            });
        }
        self.params = params;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.dim + 1];
        w.extend(&self.hidden);
        w.push(self.dim);
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn noise_schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn net_convention(&self) -> Convention {
        match self.schedule.kind() {
            ScheduleKind::Ve => Convention::Ve,
            ScheduleKind::Vp => Convention::Vp,
        }
    }

    fn layers(&self) -> Vec<Layer> {
        let mut off = 0;
        self.widths()
            .windows(2)
            .map(|p| {
                let l = Layer {
                    w: off,
                    b: off + p[0] * p[1],
                    n_in: p[0],
                    n_out: p[1],
                };
                off += p[0] * p[1] + p[1];
                l
            })
            .collect()
    }

    /// Parameter ranges of each weight matrix and bias vector.
    pub fn parameter_blocks(&self) -> Vec<std::ops::Range<usize>> {
        self.layers()
            .iter()
            .flat_map(|l| [l.w..l.b, l.b..l.b + l.n_out])
            .collect()
    }

    pub(crate) fn level(&self, t: f64) -> Result<Level, PriorError> {
        let max = self.schedule.len() as f64;
        if !(t > 0.0 && t <= max) {
            return Err(PriorError::Condition(format!("time {t} outside (0, {max}]")));
        }
        let sigma = self.schedule.sigma_at_time(t)?;
        let c = self.schedule.scale_at_time(t)?;
        let embed = match self.schedule.kind() {
            ScheduleKind::Ve => sigma.ln(),
            ScheduleKind::Vp => t / max,
        };
        Ok(Level { c, sigma, embed })
    }

    /// Forward pass on unscaled noisy points `x̃` (`B × d`).
    pub(crate) fn forward(&self, xt: &Array2<f64>, levels: &[Level]) -> Forward {
        let b = xt.nrows();
        let d = self.dim;
        let mut input = Array2::zeros((b, d + 1));
        let mut inv_norm = Vec::with_capacity(b);
        for (i, lv) in levels.iter().enumerate() {
            let k = 1.0 / (1.0 + lv.sigma * lv.sigma).sqrt();
            inv_norm.push(k);
            for j in 0..d {
                input[[i, j]] = k * xt[[i, j]];
            }
            input[[i, d]] = lv.embed;
        }
        let layers = self.layers();
        let mut acts = vec![input];
        let mut out = Array2::zeros((0, 0));
        for (li, l) in layers.iter().enumerate() {
            let w = ArrayView2::from_shape((l.n_out, l.n_in), &self.params[l.w..l.b]).expect("layout");
            let bias = ndarray::ArrayView1::from(&self.params[l.b..l.b + l.n_out]);
            let mut pre = acts[li].dot(&w.t());
            pre += &bias;
            if li + 1 < layers.len() {
                pre.mapv_inplace(f64::tanh);
                acts.push(pre);
            } else {
                out = pre;
            }
        }
        // out holds F; turn it into f
        for (i, lv) in levels.iter().enumerate() {
            let k = inv_norm[i];
            for j in 0..d {
                out[[i, j]] = -lv.sigma * xt[[i, j]] * k * k + out[[i, j]] * k;
            }
        }
        Forward { acts, f: out, inv_norm }
    }

    /// Gradient of `Σ_i ⟨g_i, f_i⟩` with respect to the parameters, where
    /// `g = ∂L/∂f`.
    pub(crate) fn backward(&self, fw: &Forward, g_f: &Array2<f64>) -> Vec<f64> {
        let layers = self.layers();
        let mut grad = vec![0.0; self.params.len()];
        let mut g = g_f.clone();
        for (i, k) in fw.inv_norm.iter().enumerate() {
            g.row_mut(i).mapv_inplace(|v| v * k);
        }
        for (li, l) in layers.iter().enumerate().rev() {
            let a_prev = &fw.acts[li];
            let dw = g.t().dot(a_prev);
            grad[l.w..l.b].copy_from_slice(dw.as_slice().expect("standard layout"));
            let db: Array1<f64> = g.sum_axis(Axis(0));
            grad[l.b..l.b + l.n_out].copy_from_slice(db.as_slice().expect("standard layout"));
            if li > 0 {
                let w = ArrayView2::from_shape((l.n_out, l.n_in), &self.params[l.w..l.b]).expect("layout");
                let mut gp = g.dot(&w);
                gp.zip_mut_with(a_prev, |gv, a| *gv *= 1.0 - a * a);
                g = gp;
            }
        }
        grad
    }

    /// Scores of `points` (`n × d`, row-major scaled inputs `z`) at time `t`.
    pub fn score_points(&self, points: &[f64], t: f64) -> Result<Vec<f64>, PriorError> {
        let d = self.dim;
        if !points.len().is_multiple_of(d) {
            return Err(PriorError::Dimension {
                expected: d * (points.len() / d + 1),
                found: points.len(),
            });
        }
        let lv = self.level(t)?;
        let n = points.len() / d;
        let xt = Array2::from_shape_fn((n, d), |(i, j)| points[i * d + j] / lv.c);
        let fw = self.forward(&xt, &vec![lv; n]);
        let k = 1.0 / (lv.c * lv.sigma);
        Ok(fw.f.iter().map(|v| v * k).collect())
    }
}

impl ScoreFunction for MlpScoreNet {
    fn convention(&self) -> Convention {
        self.net_convention()
    }

    fn schedule(&self) -> Option<&NoiseSchedule> {
        Some(&self.schedule)
    }

    /// Inputs of any shape whose length is a multiple of the network
    /// dimension; consecutive groups of `d` values are scored independently.
    fn score(&self, x: &ImageTensor, t: f64) -> Result<ImageTensor, PriorError> {
        let s = self.score_points(x.as_slice(), t)?;
        Ok(x.with_data(s)?)
    }

    fn score_batch(&self, xs: &[ImageTensor], t: f64) -> Result<Vec<ImageTensor>, PriorError> {
        let flat: Vec<f64> = xs.iter().flat_map(|x| x.as_slice().iter().copied()).collect();
        let s = self.score_points(&flat, t)?;
        let mut off = 0;
        xs.iter()
            .map(|x| {
                let part = s[off..off + x.len()].to_vec();
                off += x.len();
                Ok(x.with_data(part)?)
            })
            .collect()
    }
}
