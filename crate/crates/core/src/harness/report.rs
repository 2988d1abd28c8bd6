//! Experiment reports: `report.csv` (deterministic) and `report.txt`.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::HarnessError;
use crate::solvers::{Method, SolverConfig};

/// One (image, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub image: String,
    pub label: String,
    pub method: Method,
    /// Effective configuration, including the derived solver seed.
    pub config: SolverConfig,
    pub psnr: Option<f64>,
    pub psnr_capped: bool,
    pub ssim: Option<f64>,
    pub measurement_psnr: f64,
    pub error: Option<String>,
    pub wall_ms: f64,
}

impl ReportRow {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Means over the successful rows of one method label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub label: String,
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    pub psnr_mean: Option<f64>,
    pub ssim_mean: Option<f64>,
    /// Mean measurement PSNR over the same images as `psnr_mean`.
    pub measurement_psnr_mean: Option<f64>,
    pub wall_ms_total: f64,
}

impl MethodSummary {
    /// Mean reconstruction PSNR minus mean measurement PSNR.
    pub fn improvement_db(&self) -> Option<f64> {
        Some(self.psnr_mean? - self.measurement_psnr_mean?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageInfo {
    pub name: String,
    /// Seed of the synthetic draw, when the image is synthetic.
    pub truth_seed: Option<u64>,
    pub measurement_seed: u64,
    pub measurement_psnr: f64,
    pub measurement_ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    /// SHA-256 of the effective configuration as JSON.
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub provenance: Provenance,
    pub images: Vec<ImageInfo>,
    /// Cells in (method, image) order.
    pub rows: Vec<ReportRow>,
    pub summaries: Vec<MethodSummary>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn summarize(rows: &[ReportRow], label: &str, method: Method) -> MethodSummary {
    let mine: Vec<&ReportRow> = rows.iter().filter(|r| r.label == label).collect();
    let ok: Vec<&&ReportRow> = mine.iter().filter(|r| r.ok()).collect();
    MethodSummary {
        label: label.to_string(),
        method,
        n_ok: ok.len(),
        n_failed: mine.len() - ok.len(),
        psnr_mean: mean(ok.iter().filter_map(|r| r.psnr)),
        ssim_mean: if ok.iter().all(|r| r.ssim.is_some()) {
            mean(ok.iter().filter_map(|r| r.ssim))
        } else {
            None
        },
        measurement_psnr_mean: mean(ok.iter().map(|r| r.measurement_psnr)),
        wall_ms_total: mine.iter().map(|r| r.wall_ms).sum(),
    }
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
        (None, None) => true,
        _ => false,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    /// Builds the report; summaries follow the first-appearance order of labels.
    pub fn new(provenance: Provenance, images: Vec<ImageInfo>, rows: Vec<ReportRow>) -> Self {
        let mut labels: Vec<(String, Method)> = Vec::new();
        for r in &rows {
            if !labels.iter().any(|(l, _)| *l == r.label) {
                labels.push((r.label.clone(), r.method));
            }
        }
        let summaries = labels.iter().map(|(l, m)| summarize(&rows, l, *m)).collect();
        Self {
            provenance,
            images,
            rows,
            summaries,
        }
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.ok()).count()
    }

    pub fn summary(&self, label: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.label == label)
    }

    /// Every summary equals the mean of its per-image rows within 1e-9.
    pub fn check_consistency(&self) -> Result<(), HarnessError> {
        for s in &self.summaries {
            let fresh = summarize(&self.rows, &s.label, s.method);
            let same = fresh.n_ok == s.n_ok
                && fresh.n_failed == s.n_failed
                && close(fresh.psnr_mean, s.psnr_mean)
                && close(fresh.ssim_mean, s.ssim_mean)
                && close(fresh.measurement_psnr_mean, s.measurement_psnr_mean);
            if !same {
                return Err(HarnessError::Report(format!("aggregate for {} disagrees with its rows", s.label)));
            }
        }
        Ok(())
    }

    /// CSV with one row per cell followed by one `mean` row per method.
    /// Wall times are left out so equal runs give identical bytes.
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let p = &self.provenance;
        let mut out = String::new();
        let _ = writeln!(out, "# version={} seed={} config_sha256={}", p.version, p.seed, p.config_sha256);
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| HarnessError::Report(e.to_string());
        w.write_record([
            "row",
            "image",
            "label",
            "method",
            "psnr_db",
            "psnr_capped",
            "ssim",
            "measurement_psnr_db",
            "status",
            "error",
            "config",
        ])
        .map_err(csv_err)?;
        let config_json = |c: &SolverConfig| serde_json::to_string(c).map_err(|e| HarnessError::Report(e.to_string()));
        for r in &self.rows {
            w.write_record([
                "image".to_string(),
                r.image.clone(),
                r.label.clone(),
                r.method.to_string(),
                opt(r.psnr),
                r.psnr_capped.to_string(),
                opt(r.ssim),
                r.measurement_psnr.to_string(),
                if r.ok() { "ok" } else { "failed" }.to_string(),
                r.error.clone().unwrap_or_default(),
                config_json(&r.config)?,
            ])
            .map_err(csv_err)?;
        }
        for s in &self.summaries {
            let mut base = self.rows.iter().find(|r| r.label == s.label).map(|r| r.config.clone());
            // per-image seeds differ; the mean row shows the configured seed
            if let Some(c) = base.as_mut() {
                c.seed = 0;
            }
            let status = if s.n_failed == 0 {
                "ok".to_string()
            } else {
                format!("{} of {} failed", s.n_failed, s.n_ok + s.n_failed)
            };
            w.write_record([
                "mean".to_string(),
                "*".to_string(),
                s.label.clone(),
                s.method.to_string(),
                opt(s.psnr_mean),
                String::new(),
                opt(s.ssim_mean),
                opt(s.measurement_psnr_mean),
                status,
                String::new(),
                base.as_ref().map(config_json).transpose()?.unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Report(e.to_string()))?;
        out.push_str(&String::from_utf8(bytes).map_err(|e| HarnessError::Report(e.to_string()))?);
        Ok(out)
    }

    /// Human-readable table: a measurement row, then one row per method.
    pub fn to_table(&self) -> String {
        let p = &self.provenance;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Deblurring, {} image(s), noise sigma {}",
            self.images.len(),
            p.noise_sigma
        );
        let _ = writeln!(out, "version {}  seed {}  config sha256 {}", p.version, p.seed, p.config_sha256);
        let _ = writeln!(out);
        let width = self.summaries.iter().map(|s| s.label.len()).max().unwrap_or(0).max(11);
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>7}  {:>8}  {:>10}  failed", "Method", "PSNR", "SSIM", "dPSNR", "wall (s)");
        let meas_psnr = mean(self.images.iter().map(|i| i.measurement_psnr));
        let meas_ssim = if self.images.iter().all(|i| i.measurement_ssim.is_some()) {
            mean(self.images.iter().filter_map(|i| i.measurement_ssim))
        } else {
            None
        };
        let f = |v: Option<f64>, d: usize| v.map_or("-".to_string(), |x| format!("{x:.d$}"));
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>7}  {:>8}  {:>10}  -",
            "Measurement",
            f(meas_psnr, 2),
            f(meas_ssim, 4),
            "-",
            "-"
        );
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8}  {:>7}  {:>8}  {:>10.3}  {}",
                s.label,
                f(s.psnr_mean, 2),
                f(s.ssim_mean, 4),
                f(s.improvement_db(), 2),
                s.wall_ms_total / 1000.0,
                s.n_failed
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Images:");
        for i in &self.images {
            let truth = i.truth_seed.map_or(String::new(), |s| format!(" truth_seed={s}"));
            let _ = writeln!(
                out,
                "  {}{} measurement_seed={} measurement_psnr={:.3}",
                i.name, truth, i.measurement_seed, i.measurement_psnr
            );
        }
        let failed: Vec<&ReportRow> = self.rows.iter().filter(|r| !r.ok()).collect();
        if !failed.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "Failures:");
            for r in failed {
                let _ = writeln!(out, "  {} / {}: {}", r.label, r.image, r.error.as_deref().unwrap_or(""));
            }
        }
        out
    }

    /// Writes `report.csv` and `report.txt` into `dir` after checking that
    /// the aggregates match the rows.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        self.check_consistency()?;
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let csv = dir.join("report.csv");
        std::fs::write(&csv, self.to_csv()?).map_err(|e| HarnessError::io(&csv, e))?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.to_table()).map_err(|e| HarnessError::io(&txt, e))
    }
}
