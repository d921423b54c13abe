//! Command-line front end: `simulate`, `estimate`, `check-jacobians`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use helipad_core::sim::perturb_initialization;
use helipad_core::solver::solve;

use crate::certify::{certify, Corruption};
use crate::config::{ConfigError, ExperimentConfig};
use crate::dataset::{self, FormatError};
use crate::report::{self, Summary};

pub const DATASET_FILE: &str = "dataset.txt";

#[derive(Debug, Parser)]
#[command(
    name = "helipad",
    version,
    about = "Visual-inertial landing-pad estimator experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a config.
    Simulate(SimulateArgs),
    /// Run the estimator on a dataset and write error reports.
    Estimate(EstimateArgs),
    /// Compare analytic Jacobians against finite differences.
    CheckJacobians(CheckArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config (TOML); defaults reproduce the desk-scale experiment.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Noise seed (overrides `noise.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset file; defaults to `<out>/dataset.txt`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Disable the landmark altitude constraint.
    #[arg(long)]
    pub no_constraint: bool,
    /// Iteration count (overrides `solver.iterations`).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Damping (overrides `solver.damping`).
    #[arg(long)]
    pub damping: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, value_enum, hide = true)]
    pub corrupt: Option<Corruption>,
}

/// Failure classes with their process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Dataset(#[from] FormatError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Solver(String),
    #[error("jacobian certification failed")]
    Certification,
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) | Failure::Dataset(_) | Failure::Io(_) => 1,
            Failure::Solver(_) => 2,
            Failure::Certification => 3,
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn invalid(field: &'static str, e: impl ToString) -> Failure {
    Failure::Config(ConfigError::Field {
        field,
        message: e.to_string(),
    })
}

pub fn simulate(args: &SimulateArgs, stdout: &mut impl Write) -> Result<PathBuf, Failure> {
    let (mut cfg, out) = load_config(&args.common)?;
    if let Some(seed) = args.seed {
        cfg.noise.seed = seed;
    }
    if let Some((have, need)) = cfg.landmark_shortfall() {
        eprintln!(
            "warning: {have} landmarks is below the row-count condition ({need}) for {} keyframes",
            cfg.window_length
        );
    }
    let data = cfg
        .scenario()
        .generate()
        .map_err(|e| invalid("trajectory", e))?;
    for (f, l) in &data.dropped {
        eprintln!("warning: landmark {l} behind camera at keyframe {f}; measurement dropped");
    }
    std::fs::create_dir_all(&out)?;
    let path = out.join(DATASET_FILE);
    dataset::write(&path, &data)?;
    writeln!(
        stdout,
        "{} keyframes, {} imu samples, {} measurements ({} image coordinates), {} deltas",
        data.ground_truth.pose_count(),
        data.imu_samples.len(),
        data.pixel_measurements.len(),
        2 * data.pixel_measurements.len(),
        data.ground_truth.pose_count() - 1,
    )?;
    writeln!(stdout, "wrote {}", path.display())?;
    Ok(path)
}

pub fn estimate(args: &EstimateArgs, stdout: &mut impl Write) -> Result<Summary, Failure> {
    let (mut cfg, out) = load_config(&args.common)?;
    if args.no_constraint {
        cfg.solver.constrain_altitude = false;
    }
    if let Some(k) = args.iterations {
        cfg.solver.iterations = k;
    }
    if let Some(a) = args.damping {
        cfg.solver.damping = a;
    }
    cfg.validate()?;
    let dataset_path = args
        .dataset
        .clone()
        .unwrap_or_else(|| out.join(DATASET_FILE));
    let data = dataset::read(&dataset_path)?;
    let init = perturb_initialization(&data, cfg.init_preset())
        .map_err(|e| invalid("initialization.preset", e))?;
    let mut problem = data.problem(init).map_err(FormatError::from)?;
    problem.photometric_weight = cfg.solver.photometric_weight;
    std::fs::create_dir_all(&out)?;

    let start = Instant::now();
    let outcome = solve(&problem, &cfg.solver_config());
    let seconds = start.elapsed().as_secs_f64();
    report::write(
        &out,
        report::TIMING_FILE,
        &format!("wall_clock_seconds {seconds}\n"),
    )?;

    let rep = match outcome {
        Ok(r) => r,
        Err(e) => {
            report::write(
                &out,
                report::CONVERGENCE_FILE,
                &report::convergence_csv(&e.cost_history, &e.step_norms),
            )?;
            return Err(Failure::Solver(e.to_string()));
        }
    };
    let truth = &data.ground_truth;
    let poses = report::pose_errors(&rep.final_window, truth);
    let landmarks = report::landmark_errors(&rep.final_window, truth);
    let summary = Summary {
        keyframes: truth.pose_count(),
        landmarks: truth.landmark_count(),
        iterations: rep.iterations_run,
        initial_cost: rep.cost_history[0],
        final_cost: rep.final_cost,
        max_position_error: poses.iter().map(|p| p.position.norm()).fold(0.0, f64::max),
        max_landmark_error: landmarks
            .iter()
            .map(|l| l.position.norm())
            .fold(0.0, f64::max),
        constrained: cfg.solver.constrain_altitude,
    };
    report::write(
        &out,
        report::CONVERGENCE_FILE,
        &report::convergence_csv(&rep.cost_history, &rep.step_norms),
    )?;
    report::write(
        &out,
        report::POSE_ERROR_FILE,
        &report::pose_error_csv(&poses),
    )?;
    report::write(
        &out,
        report::LANDMARK_ERROR_FILE,
        &report::landmark_error_csv(&landmarks),
    )?;
    report::write(&out, report::SUMMARY_FILE, &report::summary_csv(&summary))?;
    writeln!(
        stdout,
        "{} iterations: cost {} -> {}, max position error {} m, max landmark error {} m, {seconds:.4} s",
        summary.iterations, summary.initial_cost, summary.final_cost, summary.max_position_error, summary.max_landmark_error
    )?;
    writeln!(stdout, "reports in {}", out.display())?;
    Ok(summary)
}

pub fn check_jacobians(args: &CheckArgs, stdout: &mut impl Write) -> Result<(), Failure> {
    let report = certify(args.seed, args.trials, args.corrupt);
    write!(stdout, "{}", report.render())?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Certification)
    }
}

pub fn run(cli: &Cli, stdout: &mut impl Write) -> Result<(), Failure> {
    match &cli.command {
        Command::Simulate(a) => simulate(a, stdout).map(|_| ()),
        Command::Estimate(a) => estimate(a, stdout).map(|_| ()),
        Command::CheckJacobians(a) => check_jacobians(a, stdout),
    }
}

/// Default dataset location for an output directory.
pub fn dataset_path(out: &Path) -> PathBuf {
    out.join(DATASET_FILE)
}
