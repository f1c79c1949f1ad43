//! File formats: versioned JSON for instances, cost schedules, and run
//! summaries, plus the CSV reports consumed by plotting scripts and tests.
//!
//! All floats are emitted with 17 significant digits (`1.0000000000000000e0`
//! style), which round-trips `f64` exactly; reloading a saved instance
//! therefore reproduces it bit for bit, and rerunning any command with a
//! fixed configuration rewrites byte-identical files.

use crate::bounds::BoundReport;
use crate::error::{Error, Result};
use crate::model::{CostSchedule, SystemInstance};
use crate::online::RegretReport;
use crate::sim::EpisodeTrace;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Current instance / schedule file format version.
pub const FORMAT_VERSION: u32 = 1;

/// Render a float with 17 significant digits (exact `f64` round-trip).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::format(format!("{what}: matrix has no rows")));
    }
    let cols = rows[0].len();
    if cols == 0 {
        return Err(Error::format(format!("{what}: matrix has no columns")));
    }
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::format(format!("{what}: ragged matrix rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// On-disk form of a system instance: a versioned header, provenance, and
/// row-major matrices. Loading re-runs the full admissibility certification.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub format_version: u32,
    /// Generator seed when the instance came from the random generator.
    pub seed: Option<u64>,
    /// Version of the generator that produced the file.
    pub generator: Option<String>,
    pub state_dim: usize,
    pub block_widths: Vec<usize>,
    pub budget: usize,
    pub sigma: f64,
    /// State matrix, row-major.
    pub a: Vec<Vec<f64>>,
    /// Input matrix, row-major.
    pub b: Vec<Vec<f64>>,
    /// Exploration partition: actuator indices per group.
    pub partition: Vec<Vec<usize>>,
    /// One stabilizing gain per group, row-major.
    pub stabilizing_gains: Vec<Vec<Vec<f64>>>,
    pub kappa: f64,
    pub ell: usize,
    pub nu: f64,
    pub zeta0: f64,
    pub eta0: f64,
}

impl InstanceFile {
    pub fn from_instance(instance: &SystemInstance, seed: Option<u64>) -> Self {
        InstanceFile {
            format_version: FORMAT_VERSION,
            seed,
            generator: Some(format!("actsel {}", env!("CARGO_PKG_VERSION"))),
            state_dim: instance.state_dim(),
            block_widths: instance.block_widths().to_vec(),
            budget: instance.budget(),
            sigma: instance.sigma(),
            a: matrix_to_rows(instance.a()),
            b: matrix_to_rows(instance.b()),
            partition: (0..instance.group_count())
                .map(|j| instance.group_subset(j).indices().to_vec())
                .collect(),
            stabilizing_gains: (0..instance.group_count())
                .map(|j| matrix_to_rows(instance.stabilizing_gain(j)))
                .collect(),
            kappa: instance.kappa(),
            ell: instance.ell(),
            nu: instance.nu(),
            zeta0: instance.zeta0(),
            eta0: instance.eta0(),
        }
    }

    pub fn into_instance(self) -> Result<SystemInstance> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported instance file version {} (this build reads {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let a = rows_to_matrix(&self.a, "state matrix")?;
        let b = rows_to_matrix(&self.b, "input matrix")?;
        let gains = self
            .stabilizing_gains
            .iter()
            .map(|g| rows_to_matrix(g, "stabilizing gain"))
            .collect::<Result<Vec<_>>>()?;
        SystemInstance::from_parts(
            a,
            b,
            self.block_widths,
            self.budget,
            self.sigma,
            self.partition,
            gains,
            self.kappa,
            self.ell,
            self.nu,
            self.zeta0,
            self.eta0,
        )
    }
}

/// Serialize an instance (with optional generator provenance) to JSON.
pub fn instance_to_json(instance: &SystemInstance, seed: Option<u64>) -> Result<String> {
    let file = InstanceFile::from_instance(instance, seed);
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    Ok(text)
}

pub fn save_instance(path: &Path, instance: &SystemInstance, seed: Option<u64>) -> Result<()> {
    let text = instance_to_json(instance, seed)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_instance(path: &Path) -> Result<SystemInstance> {
    let text = std::fs::read_to_string(path)?;
    let file: InstanceFile = serde_json::from_str(&text)?;
    file.into_instance()
}

/// On-disk form of a cost schedule: one stage/terminal cost pair and one or
/// more input-cost matrices that rounds cycle through.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub format_version: u32,
    /// Stage state cost, row-major.
    pub q: Vec<Vec<f64>>,
    /// Terminal state cost, row-major.
    pub qf: Vec<Vec<f64>>,
    /// Input costs, row-major; round `t` uses entry `(t-1) mod len`.
    pub r: Vec<Vec<Vec<f64>>>,
}

/// Load a schedule file and instantiate it over `horizon` rounds.
pub fn load_schedule(path: &Path, horizon: usize) -> Result<CostSchedule> {
    let text = std::fs::read_to_string(path)?;
    let file: ScheduleFile = serde_json::from_str(&text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported schedule file version {} (this build reads {FORMAT_VERSION})",
            file.format_version
        )));
    }
    if file.r.is_empty() {
        return Err(Error::format("schedule file lists no input costs"));
    }
    let q = rows_to_matrix(&file.q, "stage state cost")?;
    let qf = rows_to_matrix(&file.qf, "terminal state cost")?;
    let rounds = file
        .r
        .iter()
        .map(|r| Ok((q.clone(), qf.clone(), rows_to_matrix(r, "input cost")?)))
        .collect::<Result<Vec<_>>>()?;
    CostSchedule::cyclic(horizon, rounds)
}

/// Serialize any value as pretty JSON with a trailing newline.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Aggregate facts about one run, written next to its per-round CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    /// Number of rounds `T`.
    pub horizon: usize,
    pub seed: u64,
    /// Resolved estimation-phase length.
    pub tau1: usize,
    /// Number of epochs in the schedule.
    pub epochs: usize,
    /// Cumulative realized cost.
    pub cumulative_realized: f64,
    /// Cumulative per-round oracle optimum.
    pub oracle_total: f64,
    /// `R_A`: realized minus oracle.
    pub regret: f64,
    /// `R_A / T`.
    pub regret_per_round: f64,
    /// Switching hardness of the oracle's arm sequence.
    pub oracle_hardness: usize,
    /// Switching hardness of the bandit's own play sequence.
    pub control_hardness: usize,
    /// Final cost ceiling used for reward normalization.
    pub final_ceiling: f64,
    /// Control rounds where gain synthesis fell back to a stabilizing gain.
    pub fallback_rounds: usize,
}

pub fn run_summary(report: &RegretReport) -> RunSummary {
    RunSummary {
        horizon: report.config.horizon,
        seed: report.config.seed,
        tau1: report.schedule.tau1(),
        epochs: report.schedule.epoch_count(),
        cumulative_realized: report.cumulative_realized,
        oracle_total: report.oracle_total,
        regret: report.regret,
        regret_per_round: report
            .regret_per_round
            .last()
            .copied()
            .unwrap_or(0.0),
        oracle_hardness: report.oracle_hardness(),
        control_hardness: report.control_hardness(),
        final_ceiling: report.final_ceiling,
        fallback_rounds: report.rounds.iter().filter(|r| r.fallback).count(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

/// Per-round CSV: `t,phase,subset,realized_cost,oracle_cost,cum_regret`.
pub fn render_run_csv(report: &RegretReport) -> String {
    let mut out = String::from("t,phase,subset,realized_cost,oracle_cost,cum_regret\n");
    let mut cum_regret = 0.0;
    for round in &report.rounds {
        cum_regret += round.realized_cost - round.oracle_cost;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            round.t,
            round.phase.label(),
            round.subset.label(),
            fmt_f64(round.realized_cost),
            fmt_f64(round.oracle_cost),
            fmt_f64(cum_regret),
        ));
    }
    out
}

pub fn write_run_csv(path: &Path, report: &RegretReport) -> Result<()> {
    write_file(path, &render_run_csv(report))
}

/// One replicate of a sweep point.
#[derive(Debug, Clone)]
pub struct ReplicateRow {
    pub horizon: usize,
    pub seed: u64,
    pub regret: f64,
    pub regret_per_round: f64,
}

/// Per-replicate CSV: `T,seed,regret,regret_per_round`.
pub fn render_replicates_csv(rows: &[ReplicateRow]) -> String {
    let mut out = String::from("T,seed,regret,regret_per_round\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.horizon,
            row.seed,
            fmt_f64(row.regret),
            fmt_f64(row.regret_per_round),
        ));
    }
    out
}

pub fn write_replicates_csv(path: &Path, rows: &[ReplicateRow]) -> Result<()> {
    write_file(path, &render_replicates_csv(rows))
}

/// One aggregated sweep point.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub horizon: usize,
    pub mean_regret_per_round: f64,
    /// Sample standard deviation of the per-replicate `R_A/T` (0 for a
    /// single replicate).
    pub std: f64,
    pub reps: usize,
}

/// Aggregate CSV: `T,mean_regret_per_round,std,reps`.
pub fn render_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("T,mean_regret_per_round,std,reps\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.horizon,
            fmt_f64(row.mean_regret_per_round),
            fmt_f64(row.std),
            row.reps,
        ));
    }
    out
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_file(path, &render_sweep_csv(rows))
}

/// Bound-verification CSV:
/// `lemma,subset,epsilon,k,lhs,rhs,hypothesis_ok,bound_ok`.
pub fn render_bounds_csv(report: &BoundReport) -> String {
    let mut out = String::from("lemma,subset,epsilon,k,lhs,rhs,hypothesis_ok,bound_ok\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.lemma,
            row.subset,
            fmt_f64(row.epsilon),
            row.k,
            fmt_f64(row.lhs),
            fmt_f64(row.rhs),
            row.hypothesis_ok,
            row.bound_ok,
        ));
    }
    out
}

pub fn write_bounds_csv(path: &Path, report: &BoundReport) -> Result<()> {
    write_file(path, &render_bounds_csv(report))
}

/// Debug dump of one episode: `k`, then state, input, and process-noise
/// components. The terminal stage has a state but no input or noise, so
/// those cells are left empty.
pub fn render_trace_csv(trace: &EpisodeTrace) -> String {
    let n = trace.states.first().map_or(0, |x| x.len());
    let m = trace.inputs.first().map_or(0, |u| u.len());
    let mut header = String::from("k");
    for i in 0..n {
        header.push_str(&format!(",x{i}"));
    }
    for i in 0..m {
        header.push_str(&format!(",u{i}"));
    }
    for i in 0..n {
        header.push_str(&format!(",w{i}"));
    }
    let mut out = header;
    out.push('\n');
    for (k, state) in trace.states.iter().enumerate() {
        let mut line = k.to_string();
        for value in state.iter() {
            line.push_str(&format!(",{}", fmt_f64(*value)));
        }
        if k < trace.inputs.len() {
            for value in trace.inputs[k].iter() {
                line.push_str(&format!(",{}", fmt_f64(*value)));
            }
            for value in trace.process_noise[k].iter() {
                line.push_str(&format!(",{}", fmt_f64(*value)));
            }
        } else {
            for _ in 0..(n + m) {
                line.push(',');
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn write_trace_csv(path: &Path, trace: &EpisodeTrace) -> Result<()> {
    write_file(path, &render_trace_csv(trace))
}

/// Ensure a directory exists (no-op when already present).
pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

/// Write to an open sink, mapping failures into this crate's error type.
/// Used by the CLI to stream warnings without panicking on closed pipes.
pub fn write_line(sink: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(sink, "{line}")?;
    Ok(())
}
