//! `scorepnp` command-line interface.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use scorepnp::adaptation::{denoiser_for, AdaptError, ParamMatcher, RangePolicy};
use scorepnp::harness::{build_score, run_experiment, ExperimentConfig, HarnessError, PriorSpec};
use scorepnp::imaging::{load_image, save_png16};
use scorepnp::priors::PriorError;
use scorepnp::schedule::{NoiseSchedule, ScheduleSpec};
use scorepnp::toy::{
    compare_with_analytic, denoiser_error, draw_samples, first_significant_increase, save_checkpoint, toy_gmm,
    toy_ve_schedule, toy_vp_schedule, train_toy_score, DsmTrainConfig, ToyError,
};
use scorepnp::verify::{run_all, Scale};

#[derive(Parser)]
#[command(name = "scorepnp", version, about = "Plug-and-play image restoration with score-based denoisers")]
struct Cli {
    /// Overrides the experiment or training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Fail on noise levels outside a model's range instead of clamping.
    #[arg(long, global = true)]
    strict_range: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs an experiment config and writes reconstructions, traces and reports.
    Run { config: PathBuf },
    /// Prints the conditioning parameters for requested noise levels as CSV.
    MatchParams {
        /// JSON schedule file; the DDPM linear schedule when omitted.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Requested noise levels (comma separated or repeated).
        #[arg(long, value_delimiter = ',', required = true)]
        sigma: Vec<f64>,
        /// Length of the extended noise sequence (default 10·T).
        #[arg(long)]
        t_prime: Option<usize>,
    },
    /// Denoises one image at a given noise level.
    Denoise {
        image: PathBuf,
        #[arg(long)]
        sigma: f64,
        /// TOML file with a `[prior]` table.
        #[arg(long)]
        prior: PathBuf,
        /// Output PNG (default `<stem>_denoised.png` in the output directory).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Trains the 2-D toy score network and saves a checkpoint.
    TrainToyScore {
        config: PathBuf,
        /// Checkpoint path (default `toy-<convention>.ckpt` in the output directory).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Runs the oracle checks.
    Verify {
        /// Use the full problem sizes instead of the quick ones.
        #[arg(long)]
        full: bool,
    },
}

/// Exit status and message of a failed command.
struct Failure {
    code: u8,
    message: String,
}

const CONFIG_ERROR: u8 = 2;
const SOLVER_FAILURE: u8 = 3;
const TRANSPORT_ERROR: u8 = 4;

impl Failure {
    fn new(code: u8, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }

    fn config(message: impl std::fmt::Display) -> Self {
        Self::new(CONFIG_ERROR, message)
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match e {
            HarnessError::Transport(_) => TRANSPORT_ERROR,
            HarnessError::Config(_) | HarnessError::Io { .. } => CONFIG_ERROR,
            HarnessError::Report(_) => 1,
        };
        Self::new(code, e)
    }
}

impl From<AdaptError> for Failure {
    fn from(e: AdaptError) -> Self {
        let code = match e {
            AdaptError::Prior(PriorError::Transport(_)) => TRANSPORT_ERROR,
            AdaptError::NonFinite { .. } => SOLVER_FAILURE,
            _ => CONFIG_ERROR,
        };
        Self::new(code, e)
    }
}

impl From<ToyError> for Failure {
    fn from(e: ToyError) -> Self {
        let code = match e {
            ToyError::Diverged { .. } => SOLVER_FAILURE,
            _ => CONFIG_ERROR,
        };
        Self::new(code, e)
    }
}

fn policy(cli: &Cli) -> RangePolicy {
    if cli.strict_range {
        RangePolicy::Strict
    } else {
        RangePolicy::Lenient
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn out_path(cli: &Cli, explicit: Option<&PathBuf>, default_name: &str) -> Result<PathBuf, Failure> {
    if let Some(p) = explicit {
        return Ok(p.clone());
    }
    let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::config(format!("{}: {e}", dir.display())))?;
    Ok(dir.join(default_name))
}

fn run(cli: &Cli, config: &Path) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = Some(dir.clone());
    }
    cfg.set_strict_range(cli.strict_range);
    let report = run_experiment(&cfg)?;
    print!("{}", report.to_table());
    if let Some(dir) = &cfg.out_dir {
        println!("\nwrote {}", dir.display());
    }
    match report.failures() {
        0 => Ok(()),
        n => Err(Failure::new(SOLVER_FAILURE, format!("{n} of {} runs failed", report.rows.len()))),
    }
}

fn match_params(cli: &Cli, schedule: Option<&Path>, sigmas: &[f64], t_prime: Option<usize>) -> Result<(), Failure> {
    let schedule = match schedule {
        Some(p) => NoiseSchedule::load(p).map_err(Failure::config)?,
        None => ScheduleSpec::default().build().map_err(Failure::config)?,
    };
    let matcher = ParamMatcher::new(schedule, t_prime, policy(cli))?;
    let mut out = String::from("sigma_requested,c,t_cond,sigma_achieved,t_prime,sigma_interp,clamped\n");
    for &s in sigmas {
        let m = matcher.match_sigma(s)?;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.sigma_requested, m.c, m.t_cond, m.sigma_achieved, m.t_prime, m.sigma_interp, m.clamped
        );
    }
    print!("{out}");
    Ok(())
}

#[derive(Deserialize)]
struct PriorFile {
    prior: PriorSpec,
}

fn denoise(cli: &Cli, image: &Path, sigma: f64, prior: &Path, output: Option<&PathBuf>) -> Result<(), Failure> {
    let mut spec = read_toml::<PriorFile>(prior)?.prior;
    spec.resolve_paths(base_dir(prior));
    let img = load_image(image).map_err(Failure::config)?;
    let score = build_score(&spec, img.shape())?;
    let d = denoiser_for(score, None, policy(cli))?;
    let m = d.resolve(sigma)?;
    let out = d.denoise_at(&img, &m)?;
    let stem = image.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
    let path = out_path(cli, output, &format!("{stem}_denoised.png"))?;
    save_png16(&out, &path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    println!(
        "sigma_requested={} sigma_achieved={} c={} t_cond={} clamped={}",
        m.sigma_requested, m.sigma_achieved, m.c, m.t_cond, m.clamped
    );
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ToyConvention {
    Ve,
    Vp,
}

fn default_samples() -> usize {
    100_000
}

fn default_convention() -> ToyConvention {
    ToyConvention::Vp
}

/// `train-toy-score` config file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ToyTrainFile {
    #[serde(default = "default_convention")]
    convention: ToyConvention,
    /// Training samples drawn from the toy mixture.
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default)]
    sample_seed: u64,
    #[serde(default)]
    training: DsmTrainConfig,
}

const TOY_LEVELS: [f64; 4] = [0.05, 0.1, 0.2, 0.35];

fn train_toy(cli: &Cli, config: &Path, output: Option<&PathBuf>) -> Result<(), Failure> {
    let mut file: ToyTrainFile = read_toml(config)?;
    if let Some(seed) = cli.seed {
        file.training.seed = seed;
    }
    let (name, schedule) = match file.convention {
        ToyConvention::Ve => ("ve", toy_ve_schedule()),
        ToyConvention::Vp => ("vp", toy_vp_schedule()),
    };
    let prior = toy_gmm();
    let data = draw_samples(&prior, file.samples, file.sample_seed);
    log::info!("training {name} toy score for {} steps", file.training.steps);
    let trained = train_toy_score(&data, &schedule, &file.training)?;
    let path = out_path(cli, output, &format!("toy-{name}.ckpt"))?;
    save_checkpoint(&trained.net, &path)?;

    let losses = path.with_extension("losses.csv");
    let mut csv = String::from("step,loss\n");
    for (i, l) in trained.losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", i + 1);
    }
    std::fs::write(&losses, csv).map_err(|e| Failure::config(format!("{}: {e}", losses.display())))?;

    let d = denoiser_for(Arc::new(trained.net.clone()), None, RangePolicy::Strict)?;
    for s in TOY_LEVELS {
        let err = denoiser_error(d.as_ref(), &prior, s, 41)?;
        println!("denoiser error at sigma {s}: {err:.4} component std");
    }
    let cmp = compare_with_analytic(&trained.net, &prior, 100_000, file.training.weighting, 99)?;
    println!(
        "held-out loss {:.6}, analytic floor {:.6}, excess {:.2}%",
        cmp.net,
        cmp.analytic,
        100.0 * cmp.excess()
    );
    match first_significant_increase(&trained.losses, 100, 3.0) {
        None => println!("training curve monotone after window-100 smoothing"),
        Some(i) => println!("training curve rises at window {i}"),
    }
    println!("wrote {} and {}", path.display(), losses.display());
    Ok(())
}

fn verify(full: bool) -> Result<(), Failure> {
    let checks = run_all(if full { Scale::full() } else { Scale::quick() });
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::new(1, format!("{failed} of {} checks failed", checks.len())))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Run { config } => run(&cli, config),
        Command::MatchParams {
            schedule,
            sigma,
            t_prime,
        } => match_params(&cli, schedule.as_deref(), sigma, *t_prime),
        Command::Denoise {
            image,
            sigma,
            prior,
            output,
        } => denoise(&cli, image, *sigma, prior, output.as_ref()),
        Command::TrainToyScore { config, output } => train_toy(&cli, config, output.as_ref()),
        Command::Verify { full } => verify(*full),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
