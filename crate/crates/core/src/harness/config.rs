//! Experiment configuration (TOML).
//!
//! ```toml
//! seed = 7
//! out_dir = "out"
//!
//! [task]
//! noise_sigma = 0.02
//! kernel = { kind = "gaussian", size = 7, std = 1.6 }
//! synthetic = { count = 5, height = 32, width = 32 }
//!
//! [prior]
//! kind = "analytic"
//! model = "smooth-patch-gmm"
//! patch = 8
//! convention = "vp"
//!
//! [[methods]]
//! method = "pnp-admm"
//! gamma = [0.2, 0.5]      # arrays sweep: one run per value
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::imaging::BlurKernel;
use crate::priors::remote::RemoteConfig;
use crate::schedule::ScheduleSpec;
use crate::solvers::{Method, Preset, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSpec {
    Delta,
    Boxcar { size: usize },
    Gaussian { size: usize, std: f64 },
    Motion { size: usize, length: f64, angle: f64 },
    File { path: PathBuf },
}

impl KernelSpec {
    pub fn build(&self) -> Result<BlurKernel, HarnessError> {
        let k = match self {
            KernelSpec::Delta => Ok(BlurKernel::delta()),
            KernelSpec::Boxcar { size } => BlurKernel::boxcar(*size),
            KernelSpec::Gaussian { size, std } => BlurKernel::gaussian(*size, *std),
            KernelSpec::Motion { size, length, angle } => BlurKernel::motion(*size, *length, *angle),
            KernelSpec::File { path } => BlurKernel::load(path),
        };
        k.map_err(|e| HarnessError::Config(format!("kernel: {e}")))
    }
}

/// Built-in analytic image models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinModel {
    /// See [`super::SmoothGmm`].
    SmoothPatchGmm,
    /// Pixel pairs drawn from the two-mode toy mixture (synthetic images only).
    ToyGmm,
}

/// An analytic model: a built-in or a GMM file, applied patch-wise when
/// `patch` is set and to the whole image otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<BuiltinModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmm_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<usize>,
}

impl ModelSpec {
    fn check(&self, what: &str) -> Result<(), HarnessError> {
        match (&self.model, &self.gmm_file) {
            (Some(_), Some(_)) => Err(HarnessError::Config(format!("{what}: give either model or gmm_file, not both"))),
            (None, None) => Err(HarnessError::Config(format!("{what}: model or gmm_file is required"))),
            _ if self.patch == Some(0) => Err(HarnessError::Config(format!("{what}: patch must be positive"))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmulatedConvention {
    /// Score queried at σ directly (no schedule).
    Direct,
    Ve,
    #[default]
    Vp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Closed-form prior wrapped as a network of the chosen convention.
    /// The schedule defaults to the DDPM linear schedule for VP and to
    /// geometric levels 0.002..80 over 1000 steps for VE.
    Analytic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<BuiltinModel>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gmm_file: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        patch: Option<usize>,
        #[serde(default)]
        convention: EmulatedConvention,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        schedule: Option<ScheduleSpec>,
    },
    ToyCheckpoint {
        path: PathBuf,
    },
    Remote {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl PriorSpec {
    /// The analytic model, for `kind = "analytic"`.
    pub fn model(&self) -> Option<ModelSpec> {
        match self {
            PriorSpec::Analytic {
                model, gmm_file, patch, ..
            } => Some(ModelSpec {
                model: *model,
                gmm_file: gmm_file.clone(),
                patch: *patch,
            }),
            _ => None,
        }
    }

    /// Joins relative file paths onto `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        match self {
            PriorSpec::Analytic { gmm_file: Some(p), .. } | PriorSpec::ToyCheckpoint { path: p } => resolve(base, p),
            _ => {}
        }
    }

    pub fn remote_config(&self) -> Option<RemoteConfig> {
        match self {
            PriorSpec::Remote { url, timeout_ms } => Some(RemoteConfig {
                url: url.clone(),
                timeout_ms: *timeout_ms,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "one")]
    pub channels: usize,
    /// Ground-truth model; defaults to the analytic prior's model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<BuiltinModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmm_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<usize>,
}

fn one() -> usize {
    1
}

impl SyntheticSpec {
    fn own_model(&self) -> Option<ModelSpec> {
        (self.model.is_some() || self.gmm_file.is_some()).then(|| ModelSpec {
            model: self.model,
            gmm_file: self.gmm_file.clone(),
            patch: self.patch,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kernel: KernelSpec,
    pub noise_sigma: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

/// One expanded entry of the method list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRun {
    pub label: String,
    pub config: SolverConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    out_dir: Option<PathBuf>,
    task: TaskSpec,
    prior: PriorSpec,
    methods: Vec<toml::Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub task: TaskSpec,
    pub prior: PriorSpec,
    pub methods: Vec<MethodRun>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Parses and expands a config; does not touch the file system.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut task = raw.task;
        for p in &mut task.images {
            resolve(base_dir, p);
        }
        if let KernelSpec::File { path } = &mut task.kernel {
            resolve(base_dir, path);
        }
        if let Some(gf) = task.synthetic.as_mut().and_then(|s| s.gmm_file.as_mut()) {
            resolve(base_dir, gf);
        }
        let mut prior = raw.prior;
        prior.resolve_paths(base_dir);
        let mut out_dir = raw.out_dir;
        if let Some(p) = out_dir.as_mut() {
            resolve(base_dir, p);
        }
        let mut methods = Vec::new();
        for (i, table) in raw.methods.iter().enumerate() {
            methods.extend(expand_method(table).map_err(|e| HarnessError::Config(format!("methods[{i}]: {e}")))?);
        }
        let mut cfg = Self {
            seed: raw.seed,
            out_dir,
            task,
            prior,
            methods,
        };
        let noise = cfg.task.noise_sigma;
        for m in &mut cfg.methods {
            m.config.noise_sigma.get_or_insert(noise);
            m.config = m.config.resolved();
        }
        Ok(cfg)
    }

    /// Sets `strict_range` on every method.
    pub fn set_strict_range(&mut self, strict: bool) {
        for m in &mut self.methods {
            m.config.strict_range = strict;
        }
    }

    /// Model the synthetic images are drawn from.
    pub fn synthetic_model(&self) -> Option<ModelSpec> {
        let s = self.task.synthetic.as_ref()?;
        s.own_model().or_else(|| self.prior.model())
    }

    /// Structural checks plus existence of every referenced file.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let t = &self.task;
        if !(t.noise_sigma >= 0.0 && t.noise_sigma.is_finite()) {
            return bad(format!("task.noise_sigma must be finite and nonnegative, got {}", t.noise_sigma));
        }
        t.kernel.build()?;
        match (&t.synthetic, t.images.is_empty()) {
            (Some(_), false) => return bad("task: give either images or synthetic, not both".into()),
            (None, true) => return bad("task: images or synthetic is required".into()),
            _ => {}
        }
        for p in &t.images {
            if !p.is_file() {
                return bad(format!("image {} does not exist", p.display()));
            }
        }
        if let Some(s) = &t.synthetic {
            if s.count == 0 || s.height == 0 || s.width == 0 || s.channels == 0 {
                return bad("task.synthetic: count, height, width and channels must be positive".into());
            }
            let m = self
                .synthetic_model()
                .ok_or_else(|| HarnessError::Config("task.synthetic needs a model unless the prior is analytic".into()))?;
            m.check("task.synthetic")?;
            if m.model == Some(BuiltinModel::ToyGmm) && (s.height * s.width * s.channels) % 2 != 0 {
                return bad("task.synthetic: toy-gmm images need an even number of values".into());
            }
        }
        match &self.prior {
            PriorSpec::Analytic { .. } => {
                let m = self.prior.model().expect("analytic");
                m.check("prior")?;
                if m.model == Some(BuiltinModel::ToyGmm) {
                    return bad("prior: toy-gmm is only available for synthetic images".into());
                }
            }
            PriorSpec::ToyCheckpoint { .. } | PriorSpec::Remote { .. } => {}
        }
        for p in self.referenced_files() {
            if !p.is_file() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        let mut seen = BTreeMap::new();
        for m in &self.methods {
            let key = file_label(&m.label);
            if let Some(prev) = seen.insert(key, &m.label) {
                return bad(format!("method labels {prev:?} and {:?} collide", m.label));
            }
            m.config
                .validate()
                .map_err(|e| HarnessError::Config(format!("{}: {e}", m.label)))?;
        }
        Ok(())
    }

    fn referenced_files(&self) -> Vec<&Path> {
        let mut out = Vec::new();
        if let KernelSpec::File { path } = &self.task.kernel {
            out.push(path.as_path());
        }
        if let Some(p) = self.task.synthetic.as_ref().and_then(|s| s.gmm_file.as_ref()) {
            out.push(p.as_path());
        }
        match &self.prior {
            PriorSpec::Analytic { gmm_file: Some(p), .. } | PriorSpec::ToyCheckpoint { path: p } => out.push(p.as_path()),
            _ => {}
        }
        out
    }
}

/// Label made safe for use as a directory name.
pub fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-=,".contains(c) { c } else { '_' })
        .collect()
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Expands one `[[methods]]` table into runs; array values sweep.
fn expand_method(table: &toml::Table) -> Result<Vec<MethodRun>, String> {
    let mut fixed = table.clone();
    let name = match fixed.remove("name") {
        Some(toml::Value::String(s)) => Some(s),
        Some(_) => return Err("name must be a string".into()),
        None => None,
    };
    let preset: Option<Preset> = fixed
        .remove("preset")
        .map(|v| v.try_into().map_err(|e| format!("preset: {e}")))
        .transpose()?;
    let method: Method = fixed
        .get("method")
        .ok_or("method is required")?
        .clone()
        .try_into()
        .map_err(|e| format!("method: {e}"))?;
    let swept: Vec<(String, Vec<toml::Value>)> = fixed
        .iter()
        .filter_map(|(k, v)| v.as_array().map(|a| (k.clone(), a.clone())))
        .collect();
    for (k, vals) in &swept {
        if vals.is_empty() {
            return Err(format!("{k}: empty sweep"));
        }
        fixed.remove(k);
    }
    let base_label = name.unwrap_or_else(|| method.name().to_string());
    let total: usize = swept.iter().map(|(_, v)| v.len()).product();
    let mut runs = Vec::with_capacity(total);
    for idx in 0..total {
        let mut t = match preset {
            Some(p) => toml::Table::try_from(SolverConfig::preset(method, p)).map_err(|e| e.to_string())?,
            None => toml::Table::new(),
        };
        t.extend(fixed.clone());
        let mut rem = idx;
        let mut parts = Vec::new();
        for (k, vals) in swept.iter().rev() {
            let v = &vals[rem % vals.len()];
            rem /= vals.len();
            parts.push(format!("{k}={}", value_text(v)));
            t.insert(k.clone(), v.clone());
        }
        parts.reverse();
        let config: SolverConfig = toml::Value::Table(t).try_into().map_err(|e| e.to_string())?;
        let label = if parts.is_empty() {
            base_label.clone()
        } else {
            format!("{base_label}[{}]", parts.join(","))
        };
        runs.push(MethodRun { label, config });
    }
    Ok(runs)
}
