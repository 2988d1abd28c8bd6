use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{file_label, ExperimentConfig};
use super::models::{build_score, sample_images};
use super::report::{ImageInfo, MetricsReport, Provenance, ReportRow};
use super::HarnessError;
use crate::adaptation::{denoiser_for, RangePolicy};
use crate::imaging::{generate_measurement, load_image, save_png16, ImageTensor, LinearOperator, Shape};
use crate::metrics::{psnr, ssim};
use crate::priors::ScoreFunction;
use crate::rng::derive_seed;
use crate::solvers::{solve, write_trace_csv, QuadraticDataTerm, SolverConfig, SolverState};

/// Seed-path tags under the experiment seed.
const TRUTH_TAG: u64 = 1;
const MEASUREMENT_TAG: u64 = 2;
const SOLVER_TAG: u64 = 3;

/// Default length factor of the extended noise sequence.
const T_PRIME_FACTOR: usize = 10;

struct Instance {
    name: String,
    truth: ImageTensor,
    truth_seed: Option<u64>,
    measurement_seed: u64,
    dt: QuadraticDataTerm,
    score: Arc<dyn ScoreFunction>,
}

fn load_instances(cfg: &ExperimentConfig) -> Result<Vec<Instance>, HarnessError> {
    let task = &cfg.task;
    let kernel = task.kernel.build()?;
    let mut named: Vec<(String, ImageTensor, Option<u64>)> = Vec::new();
    if let Some(s) = &task.synthetic {
        let shape = Shape::new(s.height, s.width, s.channels);
        let seeds: Vec<u64> = (0..s.count as u64).map(|i| derive_seed(cfg.seed, &[TRUTH_TAG, i])).collect();
        let model = cfg.synthetic_model().expect("validated");
        for (i, (img, seed)) in sample_images(&model, shape, &seeds)?.into_iter().zip(&seeds).enumerate() {
            named.push((format!("synthetic-{i:03}"), img, Some(*seed)));
        }
    }
    for (i, p) in task.images.iter().enumerate() {
        let img = load_image(p).map_err(|e| HarnessError::Config(e.to_string()))?;
        let stem = p.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
        named.push((format!("{i:03}-{}", file_label(&stem)), img, None));
    }
    let mut scores: BTreeMap<(usize, usize, usize), Arc<dyn ScoreFunction>> = BTreeMap::new();
    let mut out = Vec::with_capacity(named.len());
    for (i, (name, truth, truth_seed)) in named.into_iter().enumerate() {
        let shape = truth.shape();
        let key = (shape.height, shape.width, shape.channels);
        let score = match scores.get(&key) {
            Some(s) => s.clone(),
            None => {
                let s = build_score(&cfg.prior, shape)?;
                scores.insert(key, s.clone());
                s
            }
        };
        let op = LinearOperator::circulant_blur(shape, kernel.clone())
            .map_err(|e| HarnessError::Config(format!("{name}: {e}")))?;
        let measurement_seed = derive_seed(cfg.seed, &[MEASUREMENT_TAG, i as u64]);
        let m = generate_measurement(&truth, &op, task.noise_sigma, measurement_seed)
            .map_err(|e| HarnessError::Config(format!("{name}: {e}")))?;
        let dt = QuadraticDataTerm::new(op, m.y).map_err(|e| HarnessError::Config(format!("{name}: {e}")))?;
        out.push(Instance {
            name,
            truth,
            truth_seed,
            measurement_seed,
            dt,
            score,
        });
    }
    Ok(out)
}

/// The config a cell actually runs with: solver seed derived per image and
/// the extended-sequence length made explicit.
fn cell_config(exp_seed: u64, image: usize, base: &SolverConfig, score: &dyn ScoreFunction) -> SolverConfig {
    let mut c = base.resolved();
    c.seed = derive_seed(exp_seed, &[SOLVER_TAG, image as u64, base.seed]);
    if c.t_prime.is_none() {
        c.t_prime = score.schedule().map(|s| T_PRIME_FACTOR * s.len());
    }
    c
}

fn run_cell(inst: &Instance, cfg: &SolverConfig) -> Result<SolverState, String> {
    // the range policy is enforced by the solver through `strict_range`
    let d = denoiser_for(inst.score.clone(), cfg.t_prime, RangePolicy::Lenient).map_err(|e| e.to_string())?;
    solve(&inst.dt, d.as_ref(), cfg, Some(&inst.truth)).map_err(|e| e.to_string())
}

/// SHA-256 (hex) of the config as JSON, without the output directory.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String, HarnessError> {
    let mut c = cfg.clone();
    c.out_dir = None;
    let json = serde_json::to_string(&c).map_err(|e| HarnessError::Report(e.to_string()))?;
    Ok(Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

/// Runs every (image, method) cell, writes reconstructions, traces and the
/// reports under `cfg.out_dir` (when set) and returns the report. Solver
/// failures are recorded per row; configuration, I/O and transport
/// problems abort the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport, HarnessError> {
    cfg.validate()?;
    let instances = load_instances(cfg)?;
    let cells: Vec<(usize, usize)> = (0..cfg.methods.len())
        .flat_map(|m| (0..instances.len()).map(move |i| (m, i)))
        .collect();
    let results: Vec<(SolverConfig, Result<SolverState, String>, f64)> = cells
        .par_iter()
        .map(|&(m, i)| {
            let inst = &instances[i];
            let c = cell_config(cfg.seed, i, &cfg.methods[m].config, inst.score.as_ref());
            let start = Instant::now();
            let r = run_cell(inst, &c);
            (c, r, start.elapsed().as_secs_f64() * 1e3)
        })
        .collect();

    let mut images = Vec::with_capacity(instances.len());
    for inst in &instances {
        let y = inst.dt.y();
        images.push(ImageInfo {
            name: inst.name.clone(),
            truth_seed: inst.truth_seed,
            measurement_seed: inst.measurement_seed,
            measurement_psnr: psnr(y, &inst.truth, 1.0)?.db,
            measurement_ssim: ssim(y, &inst.truth).ok(),
        });
    }
    let mut rows = Vec::with_capacity(cells.len());
    for (&(m, i), (config, result, wall_ms)) in cells.iter().zip(&results) {
        let inst = &instances[i];
        let mut row = ReportRow {
            image: inst.name.clone(),
            label: cfg.methods[m].label.clone(),
            method: config.method,
            config: config.clone(),
            psnr: None,
            psnr_capped: false,
            ssim: None,
            measurement_psnr: images[i].measurement_psnr,
            error: None,
            wall_ms: *wall_ms,
        };
        match result {
            Ok(state) => {
                let p = psnr(state.estimate(), &inst.truth, 1.0)?;
                row.psnr = Some(p.db);
                row.psnr_capped = p.capped;
                row.ssim = ssim(state.estimate(), &inst.truth).ok();
            }
            Err(e) => row.error = Some(e.clone()),
        }
        rows.push(row);
    }
    let provenance = Provenance {
        config_sha256: config_hash(cfg)?,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        noise_sigma: cfg.task.noise_sigma,
    };
    let report = MetricsReport::new(provenance, images, rows);
    report.check_consistency()?;
    if let Some(dir) = &cfg.out_dir {
        write_outputs(dir, cfg, &instances, &cells, &results)?;
        report.write(dir)?;
    }
    Ok(report)
}

fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    instances: &[Instance],
    cells: &[(usize, usize)],
    results: &[(SolverConfig, Result<SolverState, String>, f64)],
) -> Result<(), HarnessError> {
    let mkdir = |p: &PathBuf| std::fs::create_dir_all(p).map_err(|e| HarnessError::io(p, e));
    let images_dir = dir.join("images");
    mkdir(&images_dir)?;
    for inst in instances {
        let truth = images_dir.join(format!("{}_truth.png", inst.name));
        save_png16(&inst.truth, &truth).map_err(|e| HarnessError::io(&truth, e))?;
        let meas = images_dir.join(format!("{}_measurement.png", inst.name));
        save_png16(inst.dt.y(), &meas).map_err(|e| HarnessError::io(&meas, e))?;
    }
    for (&(m, i), (config, result, _)) in cells.iter().zip(results) {
        let Ok(state) = result else { continue };
        let run = &cfg.methods[m];
        let run_dir = dir.join("runs").join(file_label(&run.label));
        mkdir(&run_dir)?;
        let name = &instances[i].name;
        let png = run_dir.join(format!("{name}.png"));
        save_png16(state.estimate(), &png).map_err(|e| HarnessError::io(&png, e))?;
        let trace = run_dir.join(format!("{name}_trace.csv"));
        let header = format!(
            "method={}\nimage={name}\nconfig={}",
            run.label,
            serde_json::to_string(config).map_err(|e| HarnessError::Report(e.to_string()))?
        );
        let f = std::fs::File::create(&trace).map_err(|e| HarnessError::io(&trace, e))?;
        write_trace_csv(std::io::BufWriter::new(f), &header, &state.trace)
            .map_err(|e| HarnessError::io(&trace, e))?;
    }
    Ok(())
}
