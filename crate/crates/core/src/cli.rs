//! Command-line front end: instance generation, single online runs,
//! replicated horizon sweeps, and bound-verification campaigns.
//!
//! Every subcommand accepts an optional JSON config file (`--config`); any
//! flag given on the command line overrides the corresponding file key, and
//! built-in defaults fill whatever remains. All outputs are plain files
//! written with full-precision floats, and every command is idempotent:
//! rerunning with the same configuration overwrites the outputs with
//! identical bytes.
//!
//! Exit codes (see [`crate::error::Error::exit_code`]): 0 success, 2
//! configuration error, 3 infeasible schedule, 4 verification failure,
//! 1 runtime failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::CostCeiling;
use crate::bounds::{self, BoundRow, CampaignConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::linalg;
use crate::model::{self, CostSchedule, InstanceParams, SystemInstance};
use crate::online::{self, EstimatorMode, RoundPhase, RunConfig, Tau1Mode};
use crate::rng;
use crate::sim;

/// Environment variable bounding the worker-thread count for parallel
/// sections (sweep replicates, verification campaigns).
pub const WORKERS_ENV: &str = "ACTSEL_WORKERS";

const DEFAULT_STATE_DIM: usize = 3;
const DEFAULT_ACTUATORS: usize = 4;
const DEFAULT_BUDGET: usize = 2;
const DEFAULT_RADIUS: f64 = 0.9;
const DEFAULT_SIGMA: f64 = 1.0;
const DEFAULT_Q_SCALE: f64 = 1.0;
const DEFAULT_QF_SCALE: f64 = 2.0;
const DEFAULT_R_SCALE: f64 = 1.0;
const DEFAULT_N_STEPS: usize = 5;
const DEFAULT_HORIZON: usize = 200;
const DEFAULT_LAMBDA: f64 = 1.0;
const DEFAULT_REPS: usize = 10;
const DEFAULT_SEED: u64 = 1;
const DEFAULT_INSTANCE_SEED: u64 = 1;
const DEFAULT_LOG_C: usize = 1;
const DEFAULT_THEOREM_DELTA: f64 = 0.05;
const DEFAULT_OUT_DIR: &str = "out";
const DEFAULT_SWEEP_GRID: [usize; 4] = [200, 400, 800, 1600];

// ---------------------------------------------------------------------------
// Config file schema
// ---------------------------------------------------------------------------

/// Root of the JSON config file. Every field is optional; CLI flags override
/// file keys and defaults fill the rest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Where the system comes from: a saved file or generator parameters.
    pub instance: InstanceSpec,
    /// Cost schedule: identity-family scales or a saved file.
    pub schedule: ScheduleSpec,
    /// Horizon grid for `sweep`; `run` uses the first entry.
    pub horizons: Option<Vec<usize>>,
    /// Replicate seeds for `sweep`; `run` uses the first entry.
    pub seeds: Option<Vec<u64>>,
    /// Replicates per horizon in `sweep`.
    pub reps: Option<usize>,
    /// Episode length `N`.
    pub n_steps: Option<usize>,
    /// Estimation-phase length policy.
    pub tau1: Option<Tau1Spec>,
    /// Cost-to-reward normalization for the bandit.
    pub ceiling: Option<CeilingSpec>,
    /// Ridge weight of the least-squares estimator.
    pub lambda: Option<f64>,
    /// Directory all outputs are written into.
    pub output_dir: Option<PathBuf>,
    /// Verification-campaign overrides.
    pub verify: VerifySpec,
}

/// Instance source. When `file` is set it wins and the generator parameters
/// are ignored; otherwise a random instance is generated from the parameters
/// (missing ones take the built-in defaults).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceSpec {
    /// Path of a saved instance file.
    pub file: Option<PathBuf>,
    /// State dimension `n`.
    pub state_dim: Option<usize>,
    /// Actuator count `q`; each actuator gets a unit-width input block
    /// unless `block_widths` is given.
    pub actuators: Option<usize>,
    /// Input-block width per actuator (its length is `q`).
    pub block_widths: Option<Vec<usize>>,
    /// Selection budget `H`.
    pub budget: Option<usize>,
    /// Target spectral radius of the generated `A`.
    pub spectral_radius: Option<f64>,
    /// Process-noise standard deviation.
    pub sigma: Option<f64>,
    /// Generator seed.
    pub seed: Option<u64>,
}

/// Cost-schedule source: per-round matrices from a file (cycled over the
/// horizon) or the scaled-identity family.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    /// Path of a saved schedule file; wins over the scale parameters.
    pub file: Option<PathBuf>,
    /// Scale of the identity state cost `Q`.
    pub q_scale: Option<f64>,
    /// Scale of the identity terminal cost `Qf`.
    pub qf_scale: Option<f64>,
    /// Scale of the identity input cost `R`.
    pub r_scale: Option<f64>,
}

/// Estimation-phase length policy as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Tau1Spec {
    /// Explicit exploration rounds per (epoch, group).
    Fixed { value: usize },
    /// `c * ceil(ln T)` exploration rounds.
    LogT { c: usize },
    /// The theory-prescribed length (astronomically conservative at desk
    /// scale; useful only to inspect the prescription itself).
    Theorem {
        #[serde(default)]
        delta: Option<f64>,
        /// Perturbation tolerance; estimated from the instance when omitted.
        #[serde(default)]
        epsilon0: Option<f64>,
    },
}

/// Reward-normalization policy as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CeilingSpec {
    /// Grow the ceiling to the largest cost seen so far.
    Adaptive,
    /// Fixed positive ceiling.
    Fixed { value: f64 },
}

impl CeilingSpec {
    fn to_cost_ceiling(&self) -> CostCeiling {
        match self {
            CeilingSpec::Adaptive => CostCeiling::Adaptive,
            CeilingSpec::Fixed { value } => CostCeiling::Fixed(*value),
        }
    }
}

/// Verification-campaign overrides; anything left unset keeps the default
/// campaign's value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    /// Instance seeds of the campaign.
    pub instance_seeds: Option<Vec<u64>>,
    /// Perturbation sizes.
    pub epsilon_grid: Option<Vec<f64>>,
    /// Random perturbation draws per (round, size).
    pub trials: Option<usize>,
    /// Confidence level of the estimation-error checks.
    pub delta: Option<f64>,
    /// Seeds of the exploration runs feeding the estimation checks.
    pub lse_seeds: Option<Vec<u64>>,
    /// Estimation epochs per exploration run.
    pub lse_epochs: Option<usize>,
    /// Episodes per group per epoch in those runs.
    pub lse_tau1: Option<usize>,
    /// Inflate measured sides tenfold so the detector provably fires.
    pub fault_injection: Option<bool>,
}

// ---------------------------------------------------------------------------
// Command-line surface
// ---------------------------------------------------------------------------

/// Simulator and verifier for online actuator selection in finite-horizon
/// LQR with unknown dynamics.
#[derive(Debug, Parser)]
#[command(name = "actsel", version, about, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random controllable instance and save it as JSON.
    Gen(GenArgs),
    /// Execute one online run; writes per-round CSV and a JSON summary.
    Run(RunArgs),
    /// Replicated horizon sweep; writes aggregate and per-replicate CSVs.
    Sweep(SweepArgs),
    /// Bound-verification campaign; writes the row CSV and a verdict JSON.
    Verify(VerifyArgs),
}

/// Instance flags shared by `run`, `sweep`, and `verify`.
#[derive(Debug, Args)]
pub struct InstanceArgs {
    /// Load the instance from a JSON file (wins over generator flags).
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// State dimension n.
    #[arg(long)]
    pub n: Option<usize>,
    /// Actuator count q (unit-width input blocks unless --widths is given).
    #[arg(long)]
    pub q: Option<usize>,
    /// Comma-separated input-block widths, one per actuator.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    /// Selection budget H.
    #[arg(long = "H")]
    pub budget: Option<usize>,
    /// Target spectral radius of the generated A.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Process-noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Generator seed used when no instance file is given.
    #[arg(long)]
    pub instance_seed: Option<u64>,
}

/// Cost-schedule flags shared by `run` and `sweep`.
#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Load per-round cost matrices from a JSON file (cycled over T).
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Scale of the identity state cost Q.
    #[arg(long)]
    pub q_scale: Option<f64>,
    /// Scale of the identity terminal cost Qf.
    #[arg(long)]
    pub qf_scale: Option<f64>,
    /// Scale of the identity input cost R.
    #[arg(long)]
    pub r_scale: Option<f64>,
}

/// Estimation-phase length flags shared by `run` and `sweep`.
#[derive(Debug, Args)]
pub struct Tau1Args {
    /// Fixed exploration rounds per (epoch, group).
    #[arg(long = "tau1", conflicts_with_all = ["tau1_log_c", "tau1_theorem"])]
    pub tau1: Option<usize>,
    /// Use c * ceil(ln T) exploration rounds with this c.
    #[arg(long = "tau1-log-c", conflicts_with = "tau1_theorem")]
    pub tau1_log_c: Option<usize>,
    /// Use the theory-prescribed estimation length (astronomically large).
    #[arg(long = "tau1-theorem")]
    pub tau1_theorem: bool,
    /// Failure probability for the theory-prescribed length.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Perturbation tolerance for the theory-prescribed length (estimated
    /// from the instance when omitted).
    #[arg(long)]
    pub epsilon0: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// State dimension n.
    #[arg(long)]
    pub n: Option<usize>,
    /// Actuator count q (unit-width input blocks unless --widths is given).
    #[arg(long)]
    pub q: Option<usize>,
    /// Comma-separated input-block widths, one per actuator.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    /// Selection budget H.
    #[arg(long = "H")]
    pub budget: Option<usize>,
    /// Target spectral radius of the generated A.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Process-noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file.
    #[arg(long, default_value = "instance.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub tau1: Tau1Args,
    /// Number of rounds T.
    #[arg(long = "T")]
    pub horizon: Option<usize>,
    /// Master seed of the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Episode length N.
    #[arg(long)]
    pub n_steps: Option<usize>,
    /// Ridge weight of the least-squares estimator.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Reward normalization: `adaptive` or a fixed positive number.
    #[arg(long, value_parser = parse_ceiling)]
    pub ceiling: Option<CeilingSpec>,
    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write `trace.csv`: the step-level states, inputs, and noise of
    /// round 1's exploration episode (bitwise identical to the run's own).
    #[arg(long)]
    pub debug_trace: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub instance: InstanceArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub tau1: Tau1Args,
    /// Comma-separated strictly increasing horizon grid.
    #[arg(long = "T-grid", value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    /// Comma-separated replicate seeds (default 1..=reps), shared by every
    /// grid point.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Replicates per horizon.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Episode length N.
    #[arg(long)]
    pub n_steps: Option<usize>,
    /// Ridge weight of the least-squares estimator.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Reward normalization: `adaptive` or a fixed positive number.
    #[arg(long, value_parser = parse_ceiling)]
    pub ceiling: Option<CeilingSpec>,
    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub instance: InstanceArgs,
    /// Comma-separated campaign instance seeds.
    #[arg(long, value_delimiter = ',')]
    pub instance_seeds: Option<Vec<u64>>,
    /// Comma-separated perturbation sizes.
    #[arg(long, value_delimiter = ',')]
    pub epsilon_grid: Option<Vec<f64>>,
    /// Random perturbation draws per (round, size).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Episode length N.
    #[arg(long)]
    pub n_steps: Option<usize>,
    /// Confidence level of the estimation-error checks.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Comma-separated seeds of the estimation-check exploration runs.
    #[arg(long, value_delimiter = ',')]
    pub lse_seeds: Option<Vec<u64>>,
    /// Estimation epochs per exploration run.
    #[arg(long)]
    pub lse_epochs: Option<usize>,
    /// Episodes per group per epoch in those runs.
    #[arg(long)]
    pub lse_tau1: Option<usize>,
    /// Ridge weight of the estimation-check fits.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Inflate every measured side tenfold after the campaign so the
    /// violation detector provably fires (self-test of the detector).
    #[arg(long)]
    pub fault_injection: bool,
    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Parse `adaptive` or a positive number into a ceiling policy.
fn parse_ceiling(raw: &str) -> std::result::Result<CeilingSpec, String> {
    let text = raw.trim();
    if text.eq_ignore_ascii_case("adaptive") {
        return Ok(CeilingSpec::Adaptive);
    }
    let value: f64 = text
        .parse()
        .map_err(|_| format!("expected `adaptive` or a positive number, got `{raw}`"))?;
    if !(value > 0.0) || !value.is_finite() {
        return Err(format!("fixed ceiling must be positive and finite, got `{raw}`"));
    }
    Ok(CeilingSpec::Fixed { value })
}

// ---------------------------------------------------------------------------
// Resolution helpers
// ---------------------------------------------------------------------------

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let config: ExperimentConfig = serde_json::from_str(&text)?;
            Ok(config)
        }
    }
}

/// Flag value if present, else the config-file value.
fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| file.clone())
}

fn merge_instance(file: &InstanceSpec, args: &InstanceArgs) -> InstanceSpec {
    InstanceSpec {
        file: pick(&args.instance, &file.file),
        state_dim: pick(&args.n, &file.state_dim),
        actuators: pick(&args.q, &file.actuators),
        block_widths: pick(&args.widths, &file.block_widths),
        budget: pick(&args.budget, &file.budget),
        spectral_radius: pick(&args.radius, &file.spectral_radius),
        sigma: pick(&args.sigma, &file.sigma),
        seed: pick(&args.instance_seed, &file.seed),
    }
}

fn merge_schedule(file: &ScheduleSpec, args: &ScheduleArgs) -> ScheduleSpec {
    ScheduleSpec {
        file: pick(&args.schedule, &file.file),
        q_scale: pick(&args.q_scale, &file.q_scale),
        qf_scale: pick(&args.qf_scale, &file.qf_scale),
        r_scale: pick(&args.r_scale, &file.r_scale),
    }
}

/// Generator parameters from a spec, with defaults and the budget/actuator
/// consistency checks.
fn instance_params(spec: &InstanceSpec) -> Result<InstanceParams> {
    let widths = match (&spec.block_widths, spec.actuators) {
        (Some(w), Some(q)) if w.len() != q => {
            return Err(Error::invalid(format!(
                "actuator count q = {q} disagrees with the {} block widths given",
                w.len()
            )));
        }
        (Some(w), _) => w.clone(),
        (None, q) => vec![1; q.unwrap_or(DEFAULT_ACTUATORS)],
    };
    let q = widths.len();
    let budget = spec.budget.unwrap_or(DEFAULT_BUDGET);
    if budget > q {
        return Err(Error::invalid(format!(
            "selection budget H = {budget} exceeds the actuator count q = {q}"
        )));
    }
    Ok(InstanceParams {
        state_dim: spec.state_dim.unwrap_or(DEFAULT_STATE_DIM),
        block_widths: widths,
        budget,
        spectral_radius: spec.spectral_radius.unwrap_or(DEFAULT_RADIUS),
        sigma: spec.sigma.unwrap_or(DEFAULT_SIGMA),
    })
}

fn resolve_instance(spec: &InstanceSpec) -> Result<SystemInstance> {
    if let Some(path) = &spec.file {
        return io::load_instance(path);
    }
    let params = instance_params(spec)?;
    let seed = spec.seed.unwrap_or(DEFAULT_INSTANCE_SEED);
    model::generate_random_instance(&params, seed)
}

fn resolve_schedule(
    spec: &ScheduleSpec,
    horizon: usize,
    state_dim: usize,
    input_dim: usize,
) -> Result<CostSchedule> {
    if let Some(path) = &spec.file {
        return io::load_schedule(path, horizon);
    }
    CostSchedule::constant_identity(
        horizon,
        state_dim,
        input_dim,
        spec.q_scale.unwrap_or(DEFAULT_Q_SCALE),
        spec.qf_scale.unwrap_or(DEFAULT_QF_SCALE),
        spec.r_scale.unwrap_or(DEFAULT_R_SCALE),
    )
}

/// Estimation-length policy after merging flags and config, before any
/// horizon is known. The theorem mode stays symbolic because its value
/// depends on `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Tau1Resolved {
    Mode(Tau1Mode),
    Theorem { delta: f64, epsilon0: Option<f64> },
}

fn resolve_tau1_spec(args: &Tau1Args, file: &Option<Tau1Spec>) -> Tau1Resolved {
    if let Some(v) = args.tau1 {
        return Tau1Resolved::Mode(Tau1Mode::Fixed(v));
    }
    if let Some(c) = args.tau1_log_c {
        return Tau1Resolved::Mode(Tau1Mode::PracticalLogT(c));
    }
    if args.tau1_theorem {
        return Tau1Resolved::Theorem {
            delta: args.delta.unwrap_or(DEFAULT_THEOREM_DELTA),
            epsilon0: args.epsilon0,
        };
    }
    match file {
        Some(Tau1Spec::Fixed { value }) => Tau1Resolved::Mode(Tau1Mode::Fixed(*value)),
        Some(Tau1Spec::LogT { c }) => Tau1Resolved::Mode(Tau1Mode::PracticalLogT(*c)),
        Some(Tau1Spec::Theorem { delta, epsilon0 }) => Tau1Resolved::Theorem {
            delta: args.delta.or(*delta).unwrap_or(DEFAULT_THEOREM_DELTA),
            epsilon0: args.epsilon0.or(*epsilon0),
        },
    None => Tau1Resolved::Mode(Tau1Mode::PracticalLogT(DEFAULT_LOG_C)),
    }
}

/// Concrete estimation-length mode for one horizon. Theorem mode computes
/// the prescription from the instance (estimating the perturbation tolerance
/// when it was not given) and returns it as a fixed length.
fn tau1_for_horizon(
    resolved: Tau1Resolved,
    instance: &SystemInstance,
    schedule: &CostSchedule,
    n_steps: usize,
    horizon: usize,
    lambda: f64,
) -> Result<Tau1Mode> {
    match resolved {
        Tau1Resolved::Mode(mode) => Ok(mode),
        Tau1Resolved::Theorem { delta, epsilon0 } => {
            let eps0 = match epsilon0 {
                Some(e) => e,
                None => bounds::estimate_constants(instance, schedule, n_steps)?.epsilon0,
            };
            let vartheta = linalg::spectral_norm(instance.a())
                .max(linalg::spectral_norm(instance.b()));
            let tau = online::theoretical_tau1(
                instance.state_dim(),
                instance.input_dim(),
                instance.group_count(),
                n_steps,
                horizon,
                lambda,
                instance.sigma(),
                vartheta,
                eps0,
                delta,
                instance.zeta0(),
                instance.eta0(),
                instance.kappa(),
            )?;
            let value = usize::try_from(tau).map_err(|_| {
                Error::invalid(format!(
                    "theory-prescribed estimation length {tau} does not fit in usize"
                ))
            })?;
            Ok(Tau1Mode::Fixed(value))
        }
    }
}

/// Apply `ACTSEL_WORKERS` to the global thread pool. A second call (or a
/// pool already built by the host process) is harmless.
fn configure_workers() -> Result<()> {
    if let Ok(raw) = std::env::var(WORKERS_ENV) {
        let text = raw.trim();
        if text.is_empty() {
            return Ok(());
        }
        let count: usize = text.parse().map_err(|_| {
            Error::invalid(format!("{WORKERS_ENV} must be a positive integer, got `{raw}`"))
        })?;
        if count == 0 {
            return Err(Error::invalid(format!("{WORKERS_ENV} must be at least 1")));
        }
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(count)
            .build_global();
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let spec = InstanceSpec {
        file: None,
        state_dim: pick(&args.n, &cfg.instance.state_dim),
        actuators: pick(&args.q, &cfg.instance.actuators),
        block_widths: pick(&args.widths, &cfg.instance.block_widths),
        budget: pick(&args.budget, &cfg.instance.budget),
        spectral_radius: pick(&args.radius, &cfg.instance.spectral_radius),
        sigma: pick(&args.sigma, &cfg.instance.sigma),
        seed: pick(&args.seed, &cfg.instance.seed),
    };
    let params = instance_params(&spec)?;
    let seed = spec.seed.unwrap_or(DEFAULT_INSTANCE_SEED);
    let instance = model::generate_random_instance(&params, seed)?;
    io::save_instance(&args.out, &instance, Some(seed))?;
    println!(
        "gen: wrote {} (n={}, q={}, H={}, p={}, seed={})",
        args.out.display(),
        instance.state_dim(),
        instance.actuator_count(),
        instance.budget(),
        instance.group_count(),
        seed,
    );
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let ispec = merge_instance(&cfg.instance, &args.instance);
    let sspec = merge_schedule(&cfg.schedule, &args.schedule);
    let horizon = args
        .horizon
        .or_else(|| cfg.horizons.as_ref().and_then(|h| h.first().copied()))
        .unwrap_or(DEFAULT_HORIZON);
    let seed = args
        .seed
        .or_else(|| cfg.seeds.as_ref().and_then(|s| s.first().copied()))
        .unwrap_or(DEFAULT_SEED);
    let n_steps = args.n_steps.or(cfg.n_steps).unwrap_or(DEFAULT_N_STEPS);
    let lambda = args.lambda.or(cfg.lambda).unwrap_or(DEFAULT_LAMBDA);
    let ceiling = pick(&args.ceiling, &cfg.ceiling)
        .map(|c| c.to_cost_ceiling())
        .unwrap_or(CostCeiling::Adaptive);
    let out_dir = args
        .out_dir
        .clone()
        .or(cfg.output_dir)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));

    let instance = resolve_instance(&ispec)?;
    let schedule = resolve_schedule(&sspec, horizon, instance.state_dim(), instance.input_dim())?;
    let tau1 = tau1_for_horizon(
        resolve_tau1_spec(&args.tau1, &cfg.tau1),
        &instance,
        &schedule,
        n_steps,
        horizon,
        lambda,
    )?;

    let run_config = RunConfig {
        horizon,
        n_steps,
        tau1,
        lambda,
        seed,
        ceiling,
        estimator: EstimatorMode::Lse,
        gamma_override: None,
        alpha_override: None,
    };
    let report = online::run_algorithm1(&instance, &schedule, &run_config)?;

    io::ensure_dir(&out_dir)?;
    io::write_run_csv(&out_dir.join("run.csv"), &report)?;
    let summary = io::run_summary(&report);
    io::save_json(&out_dir.join("summary.json"), &summary)?;

    if args.debug_trace {
        // Round 1 is always an exploration round; replaying its stream
        // reproduces the run's own episode bit for bit.
        let group = match report.schedule.phase(1) {
            RoundPhase::Estimation { group, .. } => group,
            RoundPhase::Control { .. } => {
                return Err(Error::invalid("round 1 is not an exploration round"));
            }
        };
        let subset = instance.group_subset(group);
        let b_g = instance.b_for_subset(&subset);
        let trace = sim::rollout_exploration(
            instance.a(),
            &b_g,
            instance.stabilizing_gain(group),
            instance.sigma(),
            instance.kappa(),
            n_steps,
            &mut rng::round_stream(seed, 1),
            1,
            subset.indices().to_vec(),
        )?;
        io::write_trace_csv(&out_dir.join("trace.csv"), &trace)?;
    }

    println!(
        "run: T={} seed={} tau1={} epochs={} R_A={} R_A/T={}",
        summary.horizon,
        summary.seed,
        summary.tau1,
        summary.epochs,
        io::fmt_f64(summary.regret),
        io::fmt_f64(summary.regret_per_round),
    );
    Ok(())
}

/// Check the sweep invariants: a non-empty strictly increasing grid and
/// pairwise-distinct seeds matching the replicate count.
fn validate_sweep(horizons: &[usize], seeds: &[u64], reps: usize) -> Result<()> {
    if horizons.is_empty() {
        return Err(Error::invalid("horizon grid must not be empty"));
    }
    if horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "horizon grid must be strictly increasing, got {horizons:?}"
        )));
    }
    if reps == 0 {
        return Err(Error::invalid("replicate count must be at least 1"));
    }
    if seeds.len() != reps {
        return Err(Error::invalid(format!(
            "got {} replicate seeds for {reps} replicates",
            seeds.len()
        )));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("replicate seeds must be distinct, got {seeds:?}")));
    }
    Ok(())
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let ispec = merge_instance(&cfg.instance, &args.instance);
    let sspec = merge_schedule(&cfg.schedule, &args.schedule);
    let horizons = pick(&args.horizons, &cfg.horizons).unwrap_or_else(|| DEFAULT_SWEEP_GRID.to_vec());
    let reps = pick(&args.reps, &cfg.reps)
        .or_else(|| pick(&args.seeds, &cfg.seeds).map(|s| s.len()))
        .unwrap_or(DEFAULT_REPS);
    let seeds =
        pick(&args.seeds, &cfg.seeds).unwrap_or_else(|| (1..=reps as u64).collect::<Vec<_>>());
    validate_sweep(&horizons, &seeds, reps)?;
    let n_steps = args.n_steps.or(cfg.n_steps).unwrap_or(DEFAULT_N_STEPS);
    let lambda = args.lambda.or(cfg.lambda).unwrap_or(DEFAULT_LAMBDA);
    let ceiling = pick(&args.ceiling, &cfg.ceiling)
        .map(|c| c.to_cost_ceiling())
        .unwrap_or(CostCeiling::Adaptive);
    let out_dir = args
        .out_dir
        .clone()
        .or(cfg.output_dir)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));

    let instance = resolve_instance(&ispec)?;
    let tau1_spec = resolve_tau1_spec(&args.tau1, &cfg.tau1);
    // Schedules and estimation lengths are horizon-dependent; fix them
    // sequentially so the parallel phase below is pure.
    let mut per_horizon = Vec::with_capacity(horizons.len());
    for &t in &horizons {
        let schedule =
            resolve_schedule(&sspec, t, instance.state_dim(), instance.input_dim())?;
        let tau1 = tau1_for_horizon(tau1_spec, &instance, &schedule, n_steps, t, lambda)?;
        per_horizon.push((t, schedule, tau1));
    }

    let jobs: Vec<(usize, u64)> = (0..per_horizon.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let replicates: Vec<io::ReplicateRow> = jobs
        .par_iter()
        .map(|&(i, seed)| -> Result<io::ReplicateRow> {
            let (t, ref schedule, tau1) = per_horizon[i];
            let run_config = RunConfig {
                horizon: t,
                n_steps,
                tau1,
                lambda,
                seed,
                ceiling,
                estimator: EstimatorMode::Lse,
                gamma_override: None,
                alpha_override: None,
            };
            let report = online::run_algorithm1(&instance, schedule, &run_config)?;
            Ok(io::ReplicateRow {
                horizon: t,
                seed,
                regret: report.regret,
                regret_per_round: report.regret_per_round.last().copied().unwrap_or(0.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sweep_rows = Vec::with_capacity(horizons.len());
    for (i, &(t, _, _)) in per_horizon.iter().enumerate() {
        let values: Vec<f64> = replicates[i * seeds.len()..(i + 1) * seeds.len()]
            .iter()
            .map(|r| r.regret_per_round)
            .collect();
        let (mean, std) = mean_and_sample_std(&values);
        sweep_rows.push(io::SweepRow {
            horizon: t,
            mean_regret_per_round: mean,
            std,
            reps: values.len(),
        });
    }

    io::ensure_dir(&out_dir)?;
    io::write_sweep_csv(&out_dir.join("sweep.csv"), &sweep_rows)?;
    io::write_replicates_csv(&out_dir.join("replicates.csv"), &replicates)?;
    for row in &sweep_rows {
        println!(
            "sweep: T={} mean R_A/T={} std={} reps={}",
            row.horizon,
            io::fmt_f64(row.mean_regret_per_round),
            io::fmt_f64(row.std),
            row.reps,
        );
    }
    Ok(())
}

/// Verdict JSON written next to the verification CSV.
#[derive(Debug, Serialize)]
struct VerdictFile {
    format_version: u32,
    passed: bool,
    row_count: usize,
    deterministic_violations: usize,
    lse_trials: usize,
    lse_violations: usize,
    lse_violation_frequency: f64,
    lse_frequency_threshold: f64,
    cost_gap_slope: Option<f64>,
    all_vacuous: bool,
    fault_injection: bool,
}

fn describe_row(row: &BoundRow) -> String {
    format!(
        "lemma={} subset={} epsilon={} k={} lhs={} rhs={}",
        row.lemma,
        row.subset,
        io::fmt_f64(row.epsilon),
        row.k,
        io::fmt_f64(row.lhs),
        io::fmt_f64(row.rhs),
    )
}

fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let ispec = merge_instance(&cfg.instance, &args.instance);
    if ispec.file.is_some() {
        return Err(Error::invalid(
            "verification campaigns generate their own instances; pass generator \
             parameters (--n/--q/--H/...) instead of an instance file",
        ));
    }
    let mut campaign = CampaignConfig::default_campaign();
    campaign.params = instance_params(&ispec)?;
    if let Some(v) = pick(&args.instance_seeds, &cfg.verify.instance_seeds) {
        campaign.instance_seeds = v;
    }
    if let Some(v) = pick(&args.epsilon_grid, &cfg.verify.epsilon_grid) {
        campaign.epsilon_grid = v;
    }
    if let Some(v) = pick(&args.trials, &cfg.verify.trials) {
        campaign.trials = v;
    }
    if let Some(v) = args.n_steps.or(cfg.n_steps) {
        campaign.n_steps = v;
    }
    if let Some(v) = pick(&args.delta, &cfg.verify.delta) {
        campaign.delta = v;
    }
    if let Some(v) = pick(&args.lse_seeds, &cfg.verify.lse_seeds) {
        campaign.lse_seeds = v;
    }
    if let Some(v) = pick(&args.lse_epochs, &cfg.verify.lse_epochs) {
        campaign.lse_epochs = v;
    }
    if let Some(v) = pick(&args.lse_tau1, &cfg.verify.lse_tau1) {
        campaign.lse_tau1 = v;
    }
    if let Some(v) = args.lambda.or(cfg.lambda) {
        campaign.lambda = v;
    }
    campaign.fault_injection =
        args.fault_injection || cfg.verify.fault_injection.unwrap_or(false);
    let out_dir = args
        .out_dir
        .clone()
        .or(cfg.output_dir)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));

    let outcome = bounds::run_verification_campaign(&campaign)?;

    io::ensure_dir(&out_dir)?;
    io::write_bounds_csv(&out_dir.join("bounds.csv"), &outcome.report)?;
    let verdict = VerdictFile {
        format_version: io::FORMAT_VERSION,
        passed: outcome.passed,
        row_count: outcome.report.rows.len(),
        deterministic_violations: outcome.deterministic_violations.len(),
        lse_trials: outcome.lse_trials,
        lse_violations: outcome.lse_violations,
        lse_violation_frequency: outcome.lse_violation_frequency(),
        lse_frequency_threshold: outcome.lse_frequency_threshold,
        cost_gap_slope: outcome.cost_gap_slope,
        all_vacuous: outcome.all_vacuous,
        fault_injection: campaign.fault_injection,
    };
    io::save_json(&out_dir.join("verdict.json"), &verdict)?;

    let slope_text = outcome
        .cost_gap_slope
        .map(|s| format!("{s:.3}"))
        .unwrap_or_else(|| "n/a".to_string());
    println!(
        "verify: {} rows, {} deterministic violations, estimation failures {}/{} \
         (allowed frequency {:.4}), cost-gap slope {}",
        outcome.report.rows.len(),
        outcome.deterministic_violations.len(),
        outcome.lse_violations,
        outcome.lse_trials,
        outcome.lse_frequency_threshold,
        slope_text,
    );
    if outcome.all_vacuous {
        eprintln!(
            "warning: every perturbation size exceeded its hypothesis threshold; \
             no inequality was actually exercised — rerun with smaller --epsilon-grid values"
        );
    }
    if !outcome.passed {
        for row in outcome.deterministic_violations.iter().take(10) {
            eprintln!("violation: {}", describe_row(row));
        }
        let frequency = outcome.lse_violation_frequency();
        if frequency > outcome.lse_frequency_threshold {
            eprintln!(
                "violation: estimation-error bound failed {}/{} times \
                 (frequency {:.4} > allowed {:.4})",
                outcome.lse_violations,
                outcome.lse_trials,
                frequency,
                outcome.lse_frequency_threshold,
            );
        }
        return Err(Error::VerificationFailed(format!(
            "{} deterministic violations; estimation failures {}/{} against allowed frequency {:.4}",
            outcome.deterministic_violations.len(),
            outcome.lse_violations,
            outcome.lse_trials,
            outcome.lse_frequency_threshold,
        )));
    }
    Ok(())
}

/// Run the parsed command line to completion.
pub fn execute(cli: Cli) -> Result<()> {
    configure_workers()?;
    match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify(args) => cmd_verify(args),
    }
}
