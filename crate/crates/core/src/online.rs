//! The online actuator-selection loop, end to end.
//!
//! A run of the algorithm splits its `T` rounds into `n_e` epochs. Each epoch
//! starts with an estimation phase — `tau1` exploration episodes per actuator
//! group, played with that group's stabilizing gain plus Gaussian dither —
//! after which the model estimate is refit on all exploration data so far.
//! The rest of the epoch is a control phase: each round an Exp3.S bandit
//! picks an actuator subset, a certainty-equivalence gain schedule is
//! synthesized from the current estimate, the episode is rolled out on the
//! true system, and the realized cost is fed back to the bandit.
//!
//! Regret is measured against the per-round offline optimum
//! `J* = sum_t min_S J_t(S)` (the minimization decouples across rounds
//! because the constraint set is a product and the objective a sum), and a
//! post-hoc decomposition splits the regret into estimation-phase excess,
//! bandit excess, noise residual, and certainty-equivalence gap; the four
//! parts sum to the regret identically.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::bandit::{hardness, CostCeiling, Exp3s};
use crate::error::{Error, Result};
use crate::lqr::{evaluate_policy, optimal_expected_cost, riccati_backward};
use crate::model::{self, ActuatorSubset, CostRound, CostSchedule, SystemInstance};
use crate::rng::{round_stream, stream, BANDIT_STREAM};
use crate::sim::{realized_cost, rollout_exploration, rollout_gain_policy};
use crate::sysid::{oracle_estimate, Estimate, LseAccumulator};

/// What a single round is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundPhase {
    /// Exploration episode for actuator group `group` (0-based) of epoch
    /// `epoch` (0-based).
    Estimation { epoch: usize, group: usize },
    /// Bandit-driven certainty-equivalence episode of epoch `epoch`.
    Control { epoch: usize },
}

/// Phase tag stored on round records and emitted to CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Estimation,
    Control,
}

impl Phase {
    /// Lower-case tag used in CSV output.
    pub fn label(&self) -> &'static str {
        match self {
            Phase::Estimation => "estimation",
            Phase::Control => "control",
        }
    }
}

/// The epoch layout of a run: which of rounds `1..=T` explore which group and
/// which are control rounds.
#[derive(Debug, Clone)]
pub struct EpochSchedule {
    horizon: usize,
    tau1: usize,
    tau2: usize,
    epoch_count: usize,
    group_count: usize,
    phases: Vec<RoundPhase>,
}

/// Build the epoch layout:
/// `n_e = ceil(sqrt(T)/(tau1 p))` epochs, each holding `tau1` exploration
/// rounds per group followed by `tau2 = floor((T - n_e tau1 p)/n_e)` control
/// rounds, with the division remainder absorbed into the last epoch's control
/// phase. `p` is the number of actuator groups.
///
/// Errors when `T <= tau1 * p`: the horizon must exceed one estimation phase
/// for a control phase to exist at all.
pub fn build_schedule(horizon: usize, tau1: usize, group_count: usize) -> Result<EpochSchedule> {
    if tau1 == 0 {
        return Err(Error::invalid("tau1 must be at least 1"));
    }
    if group_count == 0 {
        return Err(Error::invalid("need at least one actuator group"));
    }
    let est_per_epoch = tau1 * group_count;
    if horizon <= est_per_epoch {
        return Err(Error::InfeasibleSchedule(format!(
            "horizon T = {horizon} must exceed tau1 * p = {est_per_epoch} \
             (tau1 = {tau1}, p = {group_count})"
        )));
    }
    // n_e = ceil(sqrt(T) / (tau1 p)), computed in exact integer arithmetic:
    // the smallest k with (k tau1 p)^2 >= T.
    let mut epoch_count = 1usize;
    while (epoch_count * est_per_epoch).pow(2) < horizon {
        epoch_count += 1;
    }
    let est_total = epoch_count * est_per_epoch;
    debug_assert!(est_total <= horizon, "estimation rounds exceed the horizon");
    let tau2 = (horizon - est_total) / epoch_count;
    let remainder = horizon - epoch_count * (est_per_epoch + tau2);

    let mut phases = Vec::with_capacity(horizon);
    for epoch in 0..epoch_count {
        for group in 0..group_count {
            for _ in 0..tau1 {
                phases.push(RoundPhase::Estimation { epoch, group });
            }
        }
        let control = tau2 + if epoch + 1 == epoch_count { remainder } else { 0 };
        for _ in 0..control {
            phases.push(RoundPhase::Control { epoch });
        }
    }
    debug_assert_eq!(phases.len(), horizon);
    Ok(EpochSchedule {
        horizon,
        tau1,
        tau2,
        epoch_count,
        group_count,
        phases,
    })
}

impl EpochSchedule {
    /// Total number of rounds `T`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Exploration rounds per (epoch, group).
    pub fn tau1(&self) -> usize {
        self.tau1
    }

    /// Base control rounds per epoch (the last epoch also gets the division
    /// remainder).
    pub fn tau2(&self) -> usize {
        self.tau2
    }

    /// Number of epochs `n_e`.
    pub fn epoch_count(&self) -> usize {
        self.epoch_count
    }

    /// Number of actuator groups `p`.
    pub fn group_count(&self) -> usize {
        self.group_count
    }

    /// Phase of round `t` (1-based).
    pub fn phase(&self, t: usize) -> RoundPhase {
        assert!(t >= 1 && t <= self.horizon, "round {t} outside 1..={}", self.horizon);
        self.phases[t - 1]
    }

    /// First round (1-based) of epoch `i`'s group-`j` exploration block for
    /// `j < p`, or of its control phase for `j = p`.
    pub fn boundary(&self, epoch: usize, j: usize) -> usize {
        assert!(epoch < self.epoch_count && j <= self.group_count);
        epoch * (self.tau1 * self.group_count + self.tau2) + j * self.tau1 + 1
    }

    /// Total exploration rounds `n_e * tau1 * p`.
    pub fn estimation_round_count(&self) -> usize {
        self.epoch_count * self.tau1 * self.group_count
    }

    /// Total control rounds.
    pub fn control_round_count(&self) -> usize {
        self.horizon - self.estimation_round_count()
    }

    /// Control rounds in epoch `i` (the last epoch absorbs the remainder).
    pub fn control_rounds_in_epoch(&self, epoch: usize) -> usize {
        assert!(epoch < self.epoch_count);
        if epoch + 1 == self.epoch_count {
            self.tau2 + (self.horizon - self.epoch_count * (self.tau1 * self.group_count + self.tau2))
        } else {
            self.tau2
        }
    }
}

/// Exploration-noise state ceiling used inside [`theoretical_tau1`]:
/// `z_b = 20 zeta0^2 (1+kappa)^2 sigma^2 / (1-eta0)^2
///        * (2 (vartheta^2 + 1) kappa^2 m + n) * ln(8 N T / delta)`.
#[allow(clippy::too_many_arguments)]
pub fn exploration_state_ceiling(
    state_dim: usize,
    input_dim: usize,
    n_steps: usize,
    horizon: usize,
    sigma: f64,
    vartheta: f64,
    delta: f64,
    zeta0: f64,
    eta0: f64,
    kappa: f64,
) -> f64 {
    let n = state_dim as f64;
    let m = input_dim as f64;
    20.0 * zeta0 * zeta0 * (1.0 + kappa).powi(2) * sigma * sigma / (1.0 - eta0).powi(2)
        * (2.0 * (vartheta * vartheta + 1.0) * kappa * kappa * m + n)
        * (8.0 * n_steps as f64 * horizon as f64 / delta).ln()
}

/// Theory-prescribed estimation-phase length:
///
/// `tau1 = ceil( 160 n ( lambda vartheta^2 n / sigma^2
///                     + 2 (n+m) ln( (8n/delta) (p + N T z_b / lambda) ) )
///              / ((N-1) epsilon0^2) )`
///
/// with `z_b` from [`exploration_state_ceiling`]. The value is astronomically
/// conservative at desk scale; practical runs use [`practical_tau1`].
#[allow(clippy::too_many_arguments)]
pub fn theoretical_tau1(
    state_dim: usize,
    input_dim: usize,
    group_count: usize,
    n_steps: usize,
    horizon: usize,
    lambda: f64,
    sigma: f64,
    vartheta: f64,
    epsilon0: f64,
    delta: f64,
    zeta0: f64,
    eta0: f64,
    kappa: f64,
) -> Result<u64> {
    if state_dim == 0 || input_dim == 0 || group_count == 0 || horizon == 0 {
        return Err(Error::invalid("dimensions, group count, and horizon must be positive"));
    }
    if n_steps < 2 {
        return Err(Error::invalid("episode length must be at least 2"));
    }
    if !(epsilon0 > 0.0) || !epsilon0.is_finite() {
        return Err(Error::invalid(
            "epsilon0 must be positive (estimate it from the instance constants first)",
        ));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta must lie strictly between 0 and 1"));
    }
    if !(eta0 > 0.0 && eta0 < 1.0) {
        return Err(Error::invalid("eta0 must lie strictly between 0 and 1"));
    }
    for (name, v) in [
        ("lambda", lambda),
        ("sigma", sigma),
        ("vartheta", vartheta),
        ("zeta0", zeta0),
        ("kappa", kappa),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("{name} must be positive and finite")));
        }
    }
    let n = state_dim as f64;
    let m = input_dim as f64;
    let z_b = exploration_state_ceiling(
        state_dim, input_dim, n_steps, horizon, sigma, vartheta, delta, zeta0, eta0, kappa,
    );
    let inner = (8.0 * n / delta)
        * (group_count as f64 + n_steps as f64 * horizon as f64 * z_b / lambda);
    let numerator =
        160.0 * n * (lambda * vartheta * vartheta * n / (sigma * sigma) + 2.0 * (n + m) * inner.ln());
    let tau1 = (numerator / ((n_steps as f64 - 1.0) * epsilon0 * epsilon0)).ceil();
    if !tau1.is_finite() || tau1 < 1.0 {
        return Err(Error::numerical(format!("tau1 evaluation produced {tau1}")));
    }
    Ok(tau1 as u64)
}

/// Practical estimation-phase length `c * ceil(ln T)` (natural log), never
/// below 1.
pub fn practical_tau1(c: usize, horizon: usize) -> Result<usize> {
    if c == 0 {
        return Err(Error::invalid("tau1 scale c must be at least 1"));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let log_ceil = (horizon as f64).ln().ceil() as usize;
    Ok(c * log_ceil.max(1))
}

/// How the estimation-phase length is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum Tau1Mode {
    /// Explicit exploration rounds per (epoch, group).
    Fixed(usize),
    /// `c * ceil(ln T)` exploration rounds with the given `c`.
    PracticalLogT(usize),
}

impl Tau1Mode {
    /// Concrete `tau1` for a horizon.
    pub fn resolve(&self, horizon: usize) -> Result<usize> {
        match *self {
            Tau1Mode::Fixed(v) => {
                if v == 0 {
                    return Err(Error::invalid("tau1 must be at least 1"));
                }
                Ok(v)
            }
            Tau1Mode::PracticalLogT(c) => practical_tau1(c, horizon),
        }
    }
}

/// Which estimator feeds the certainty-equivalence controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// Ridge least squares on the exploration data (the actual algorithm).
    Lse,
    /// Short-circuit with the true system matrices (diagnostics: isolates
    /// the bandit and noise contributions to regret).
    OracleTruth,
}

/// Parameters of one run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    /// Number of rounds `T`.
    pub horizon: usize,
    /// Episode length `N` (stages per round).
    pub n_steps: usize,
    /// Estimation-phase length policy.
    pub tau1: Tau1Mode,
    /// Ridge weight for the least-squares estimator.
    pub lambda: f64,
    /// Master seed; every random draw in the run derives from it.
    pub seed: u64,
    /// Cost-to-reward normalization policy for the bandit.
    pub ceiling: CostCeiling,
    /// Estimator choice.
    pub estimator: EstimatorMode,
    /// Optional bandit exploration-rate override.
    pub gamma_override: Option<f64>,
    /// Optional bandit weight-sharing override.
    pub alpha_override: Option<f64>,
}

impl RunConfig {
    /// Defaults used throughout: `tau1 = 1 * ceil(ln T)`, `lambda = 1`,
    /// adaptive cost ceiling, ridge estimator, theory-driven bandit rates.
    pub fn new(horizon: usize, n_steps: usize, seed: u64) -> Self {
        RunConfig {
            horizon,
            n_steps,
            tau1: Tau1Mode::PracticalLogT(1),
            lambda: 1.0,
            seed,
            ceiling: CostCeiling::Adaptive,
            estimator: EstimatorMode::Lse,
            gamma_override: None,
            alpha_override: None,
        }
    }
}

/// What happened in one round.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    /// Round index, 1-based.
    pub t: usize,
    pub phase: Phase,
    /// Epoch the round belongs to, 0-based.
    pub epoch: usize,
    /// Subset played: the exploration group in estimation rounds, the
    /// bandit's choice in control rounds.
    pub subset: ActuatorSubset,
    /// Bandit arm index (control rounds only).
    pub action: Option<usize>,
    /// Realized episode cost `J_t(S_t, u)`.
    pub realized_cost: f64,
    /// Per-round offline optimum `min_S J_t(S)`.
    pub oracle_cost: f64,
    /// Whether certainty-equivalence synthesis fell back to a stabilizing
    /// gain because the estimated model rejected the Riccati recursion.
    pub fallback: bool,
}

/// Full account of one run.
#[derive(Debug, Clone)]
pub struct RegretReport {
    pub rounds: Vec<RoundRecord>,
    /// Sum of realized costs.
    pub cumulative_realized: f64,
    /// `J* = sum_t min_S J_t(S)`.
    pub oracle_total: f64,
    /// `R_A = cumulative realized - J*`.
    pub regret: f64,
    /// Prefix series `R_A(T')/T'` for `T' = 1..=T`.
    pub regret_per_round: Vec<f64>,
    /// Model estimate checkpointed after each epoch's estimation phase.
    pub estimates: Vec<Estimate>,
    /// Bandit arm sequence over the control rounds, in play order.
    pub control_actions: Vec<usize>,
    /// Oracle-optimal arm per round (comparator sequence for hardness).
    pub oracle_actions: Vec<usize>,
    /// Number of bandit arms `|Q|`.
    pub action_count: usize,
    /// Final cost ceiling `y_b` (running maximum in adaptive mode).
    pub final_ceiling: f64,
    pub schedule: EpochSchedule,
    pub config: RunConfig,
}

impl RegretReport {
    /// Hardness of the oracle comparator sequence (1 for time-invariant
    /// schedules).
    pub fn oracle_hardness(&self) -> usize {
        hardness(&self.oracle_actions)
    }

    /// Hardness of the bandit's own play sequence.
    pub fn control_hardness(&self) -> usize {
        hardness(&self.control_actions)
    }
}

/// Per-subset oracle costs `J_t(S)` for every distinct cost round, computed
/// by exact Riccati recursions on the true system and shared across rounds
/// with identical cost matrices.
#[derive(Debug, Clone)]
pub struct OracleCostTable {
    subsets: Vec<ActuatorSubset>,
    costs_per_key: Vec<Vec<f64>>,
    best_per_key: Vec<(usize, f64)>,
    round_keys: Vec<usize>,
}

impl OracleCostTable {
    /// Evaluate every admissible subset on every distinct cost round, for
    /// rounds `1..=horizon`.
    pub fn new(
        instance: &SystemInstance,
        cost_schedule: &CostSchedule,
        n_steps: usize,
        horizon: usize,
    ) -> Result<Self> {
        if horizon == 0 || horizon > cost_schedule.horizon() {
            return Err(Error::invalid(format!(
                "oracle table horizon {horizon} outside the cost schedule's 1..={}",
                cost_schedule.horizon()
            )));
        }
        let subsets = instance.admissible_subsets()?;
        let mut costs_per_key = Vec::with_capacity(cost_schedule.distinct().len());
        let mut best_per_key = Vec::with_capacity(cost_schedule.distinct().len());
        for round in cost_schedule.distinct() {
            let mut costs = Vec::with_capacity(subsets.len());
            for subset in &subsets {
                let (b_s, r_s) = instance.restrict(&round.r, subset)?;
                let sched = riccati_backward(instance.a(), &b_s, &round.q, &round.qf, &r_s, n_steps)?;
                costs.push(optimal_expected_cost(&sched, instance.sigma()));
            }
            let best = costs
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).expect("costs are finite"))
                .map(|(i, &c)| (i, c))
                .expect("at least one admissible subset");
            costs_per_key.push(costs);
            best_per_key.push(best);
        }
        let round_keys = (1..=horizon).map(|t| cost_schedule.round_key(t)).collect();
        Ok(OracleCostTable {
            subsets,
            costs_per_key,
            best_per_key,
            round_keys,
        })
    }

    /// All admissible subsets in arm-index order.
    pub fn subsets(&self) -> &[ActuatorSubset] {
        &self.subsets
    }

    /// Costs for round `t` (1-based), aligned with [`Self::subsets`].
    pub fn costs(&self, t: usize) -> &[f64] {
        &self.costs_per_key[self.round_keys[t - 1]]
    }

    /// `(argmin, min)` for round `t` (ties resolve to the lowest index).
    pub fn best(&self, t: usize) -> (usize, f64) {
        self.best_per_key[self.round_keys[t - 1]]
    }

    /// `J* = sum_t min_S J_t(S)` over rounds `1..=horizon`.
    pub fn oracle_total(&self) -> f64 {
        self.round_keys.iter().map(|&k| self.best_per_key[k].1).sum()
    }
}

/// Oracle cost of every admissible subset at round `t`: exact expected
/// episode cost under the optimal gains for that subset, on the true system.
pub fn oracle_round_costs(
    instance: &SystemInstance,
    cost_schedule: &CostSchedule,
    n_steps: usize,
    t: usize,
) -> Result<Vec<(ActuatorSubset, f64)>> {
    if t == 0 || t > cost_schedule.horizon() {
        return Err(Error::invalid(format!(
            "round {t} outside the cost schedule's 1..={}",
            cost_schedule.horizon()
        )));
    }
    let round = cost_schedule.round(t);
    let subsets = instance.admissible_subsets()?;
    let mut out = Vec::with_capacity(subsets.len());
    for subset in subsets {
        let (b_s, r_s) = instance.restrict(&round.r, &subset)?;
        let sched = riccati_backward(instance.a(), &b_s, &round.q, &round.qf, &r_s, n_steps)?;
        let cost = optimal_expected_cost(&sched, instance.sigma());
        out.push((subset, cost));
    }
    Ok(out)
}

/// Stabilizing gain used when certainty-equivalence synthesis fails for a
/// subset: the gain of the group sharing the most actuators with the subset
/// (ties to the lowest group index), with zero rows for the subset's
/// actuators outside that group.
pub fn fallback_gain(instance: &SystemInstance, subset: &ActuatorSubset) -> DMatrix<f64> {
    let mut best_group = 0;
    let mut best_overlap = 0;
    for (j, group) in instance.partition().iter().enumerate() {
        let overlap = subset.indices().iter().filter(|i| group.contains(i)).count();
        if overlap > best_overlap {
            best_overlap = overlap;
            best_group = j;
        }
    }
    let group = &instance.partition()[best_group];
    let gain_g = instance.stabilizing_gain(best_group);
    let widths = instance.block_widths();
    let n = instance.state_dim();
    let mut gain = DMatrix::zeros(instance.subset_width(subset), n);
    let mut row = 0;
    for &actuator in subset.indices() {
        let w = widths[actuator];
        if let Some(pos) = group.iter().position(|&g| g == actuator) {
            let row_in_group: usize = group[..pos].iter().map(|&g| widths[g]).sum();
            gain.view_mut((row, 0), (w, n))
                .copy_from(&gain_g.view((row_in_group, 0), (w, n)));
        }
        row += w;
    }
    gain
}

/// Certainty-equivalence gain schedule for `subset` from an estimate: the
/// Riccati recursion on the estimated model with the round's cost matrices.
/// Returns the gains and whether the stabilizing fallback had to be used
/// (the estimated model can reject the recursion; the round still needs a
/// playable policy).
pub fn ce_gains(
    instance: &SystemInstance,
    estimate: &Estimate,
    subset: &ActuatorSubset,
    round: &CostRound,
    n_steps: usize,
) -> (Vec<DMatrix<f64>>, bool) {
    let synthesized = model::restrict(&estimate.b_hat, &round.r, instance.block_widths(), subset)
        .and_then(|(b_s_hat, r_s)| {
            riccati_backward(&estimate.a_hat, &b_s_hat, &round.q, &round.qf, &r_s, n_steps)
        });
    match synthesized {
        Ok(sched) if sched.gains.iter().all(crate::linalg::all_finite) => (sched.gains, false),
        _ => (vec![fallback_gain(instance, subset); n_steps], true),
    }
}

/// Execute one full run. Deterministic in `(instance, cost_schedule, config)`:
/// the bandit draws from stream 0 of the master seed and round `t` draws its
/// noise from stream `t`, so identical inputs reproduce identical reports.
pub fn run_algorithm1(
    instance: &SystemInstance,
    cost_schedule: &CostSchedule,
    config: &RunConfig,
) -> Result<RegretReport> {
    let horizon = config.horizon;
    if horizon == 0 {
        return Err(Error::invalid("run horizon must be at least 1"));
    }
    if config.n_steps == 0 {
        return Err(Error::invalid("episode length must be at least 1"));
    }
    if cost_schedule.horizon() < horizon {
        return Err(Error::invalid(format!(
            "cost schedule covers {} rounds but the run needs {horizon}",
            cost_schedule.horizon()
        )));
    }
    if !(config.lambda > 0.0) || !config.lambda.is_finite() {
        return Err(Error::invalid(format!(
            "ridge weight must be positive, got {}",
            config.lambda
        )));
    }
    let n = instance.state_dim();
    let m = instance.input_dim();
    for (key, round) in cost_schedule.distinct().iter().enumerate() {
        if round.q.nrows() != n || round.r.nrows() != m {
            return Err(Error::invalid(format!(
                "cost round {key} is shaped for ({}, {}) but the instance has (n, m) = ({n}, {m})",
                round.q.nrows(),
                round.r.nrows()
            )));
        }
    }

    let tau1 = config.tau1.resolve(horizon)?;
    let schedule = build_schedule(horizon, tau1, instance.group_count())?;
    let oracle = OracleCostTable::new(instance, cost_schedule, config.n_steps, horizon)?;

    let control_total = schedule.control_round_count();
    let mut bandit = if control_total > 0 {
        let b = Exp3s::with_overrides(
            instance.actuator_count(),
            instance.budget(),
            control_total,
            config.ceiling,
            config.gamma_override,
            config.alpha_override,
        )?;
        debug_assert_eq!(b.subsets(), oracle.subsets());
        Some(b)
    } else {
        None
    };
    let mut bandit_rng = stream(config.seed, BANDIT_STREAM);

    let mut accumulator = LseAccumulator::new(instance);
    let mut estimates: Vec<Estimate> = Vec::new();
    // CE gains per (distinct cost round, arm), valid for the current epoch's
    // estimate only; cleared at every refit.
    let mut gain_cache: BTreeMap<(usize, usize), (Vec<DMatrix<f64>>, bool)> = BTreeMap::new();
    let est_per_epoch = schedule.tau1() * schedule.group_count();
    let mut est_in_epoch = 0usize;

    let mut rounds = Vec::with_capacity(horizon);
    let mut control_actions = Vec::with_capacity(control_total);
    let mut oracle_actions = Vec::with_capacity(horizon);
    let mut regret_per_round = Vec::with_capacity(horizon);
    let mut cum_realized = 0.0;
    let mut cum_oracle = 0.0;

    for t in 1..=horizon {
        let round = cost_schedule.round(t);
        let (best_action, best_cost) = oracle.best(t);
        oracle_actions.push(best_action);
        let record = match schedule.phase(t) {
            RoundPhase::Estimation { epoch, group } => {
                let subset = instance.group_subset(group);
                let b_g = instance.b_for_subset(&subset);
                let (_, r_g) = instance.restrict(&round.r, &subset)?;
                let trace = rollout_exploration(
                    instance.a(),
                    &b_g,
                    instance.stabilizing_gain(group),
                    instance.sigma(),
                    instance.kappa(),
                    config.n_steps,
                    &mut round_stream(config.seed, t),
                    t,
                    subset.indices().to_vec(),
                )?;
                let cost = realized_cost(&trace, &round.q, &round.qf, &r_g)?;
                if config.estimator == EstimatorMode::Lse {
                    accumulator.absorb(group, &trace)?;
                }
                est_in_epoch += 1;
                if est_in_epoch == est_per_epoch {
                    // Epoch's estimation phase complete: refit on everything
                    // gathered so far and drop stale gains.
                    let epoch_number = estimates.len() + 1;
                    let estimate = match config.estimator {
                        EstimatorMode::Lse => accumulator.fit(config.lambda, epoch_number, instance)?,
                        EstimatorMode::OracleTruth => {
                            oracle_estimate(instance, config.lambda, epoch_number)
                        }
                    };
                    estimates.push(estimate);
                    gain_cache.clear();
                    est_in_epoch = 0;
                }
                RoundRecord {
                    t,
                    phase: Phase::Estimation,
                    epoch,
                    subset,
                    action: None,
                    realized_cost: cost,
                    oracle_cost: best_cost,
                    fallback: false,
                }
            }
            RoundPhase::Control { epoch } => {
                let bandit_state = bandit.as_mut().expect("control rounds imply a bandit");
                let action = bandit_state.sample(&mut bandit_rng);
                let subset = oracle.subsets()[action].clone();
                let key = cost_schedule.round_key(t);
                let estimate = estimates.last().expect("estimation precedes control");
                let (gains, fallback) = gain_cache
                    .entry((key, action))
                    .or_insert_with(|| ce_gains(instance, estimate, &subset, round, config.n_steps))
                    .clone();
                let (b_s, r_s) = instance.restrict(&round.r, &subset)?;
                let trace = rollout_gain_policy(
                    instance.a(),
                    &b_s,
                    &gains,
                    instance.sigma(),
                    &mut round_stream(config.seed, t),
                    t,
                    subset.indices().to_vec(),
                )?;
                let cost = realized_cost(&trace, &round.q, &round.qf, &r_s)?;
                bandit_state.update(action, cost)?;
                control_actions.push(action);
                RoundRecord {
                    t,
                    phase: Phase::Control,
                    epoch,
                    subset,
                    action: Some(action),
                    realized_cost: cost,
                    oracle_cost: best_cost,
                    fallback,
                }
            }
        };
        cum_realized += record.realized_cost;
        cum_oracle += record.oracle_cost;
        regret_per_round.push((cum_realized - cum_oracle) / t as f64);
        rounds.push(record);
    }

    debug_assert_eq!(estimates.len(), schedule.epoch_count());
    debug_assert_eq!(control_actions.len(), control_total);
    let final_ceiling = bandit
        .as_ref()
        .map(|b| b.cost_ceiling())
        .unwrap_or(match config.ceiling {
            CostCeiling::Fixed(y) => y,
            CostCeiling::Adaptive => 0.0,
        });
    let action_count = oracle.subsets().len();
    Ok(RegretReport {
        regret: cum_realized - cum_oracle,
        cumulative_realized: cum_realized,
        oracle_total: cum_oracle,
        rounds,
        regret_per_round,
        estimates,
        control_actions,
        oracle_actions,
        action_count,
        final_ceiling,
        schedule,
        config: config.clone(),
    })
}

/// Regret split into four per-round series. Estimation rounds contribute to
/// the first series only; control rounds split across the other three. All
/// series have length `T` with zeros where a term does not apply.
///
/// With `J^_t(S)` the exact expected cost of playing the epoch's
/// certainty-equivalence gains for `S` on the true system:
///
/// * estimation excess: `realized - min_S J_t(S)` on estimation rounds;
/// * bandit excess: `J^_t(S_t) - J^_t(S*_t)`, the cost of the bandit's pick
///   over the oracle subset under the same estimate (this split of the
///   control-phase residual is this library's reporting convention);
/// * noise residual: `realized - J^_t(S_t)`, mean zero over noise draws;
/// * certainty-equivalence gap: `J^_t(S*_t) - J_t(S*_t)`, the price of the
///   estimation error on the oracle subset.
///
/// The four totals sum to the run's regret identically.
#[derive(Debug, Clone)]
pub struct RegretDecomposition {
    pub estimation_excess: Vec<f64>,
    pub bandit_excess: Vec<f64>,
    pub noise_residual: Vec<f64>,
    pub ce_gap: Vec<f64>,
    /// Sum of the certainty-equivalence gap over each epoch's control rounds.
    pub ce_gap_by_epoch: Vec<f64>,
    /// Totals of the four series, in the order above.
    pub totals: [f64; 4],
    /// The run's regret `R_A`, for reference.
    pub regret: f64,
}

/// Split a finished run's regret into the four components. `estimates` must
/// be the per-epoch checkpoints from the run (one per epoch).
///
/// Verifies the accounting identity: the four totals must sum to the run's
/// regret within `1e-6` relative, else an error is returned.
pub fn regret_decomposition(
    report: &RegretReport,
    instance: &SystemInstance,
    cost_schedule: &CostSchedule,
    estimates: &[Estimate],
) -> Result<RegretDecomposition> {
    let epochs = report.schedule.epoch_count();
    if estimates.len() != epochs {
        return Err(Error::invalid(format!(
            "need one estimate checkpoint per epoch: expected {epochs}, got {}",
            estimates.len()
        )));
    }
    let horizon = report.config.horizon;
    let n_steps = report.config.n_steps;
    let oracle = OracleCostTable::new(instance, cost_schedule, n_steps, horizon)?;

    let mut estimation_excess = vec![0.0; horizon];
    let mut bandit_excess = vec![0.0; horizon];
    let mut noise_residual = vec![0.0; horizon];
    let mut ce_gap = vec![0.0; horizon];
    let mut ce_gap_by_epoch = vec![0.0; epochs];

    // Expected cost of the epoch's CE gains for an arm, on the true system.
    let mut cache: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    let mut expected_ce_cost = |epoch: usize, key: usize, action: usize| -> Result<f64> {
        if let Some(&v) = cache.get(&(epoch, key, action)) {
            return Ok(v);
        }
        let round = &cost_schedule.distinct()[key];
        let subset = &oracle.subsets()[action];
        let (gains, _) = ce_gains(instance, &estimates[epoch], subset, round, n_steps);
        let (b_s, r_s) = instance.restrict(&round.r, subset)?;
        let value = evaluate_policy(
            instance.a(),
            &b_s,
            &gains,
            &round.q,
            &round.qf,
            &r_s,
            instance.sigma(),
        )?
        .expected_cost;
        cache.insert((epoch, key, action), value);
        Ok(value)
    };

    for record in &report.rounds {
        let i = record.t - 1;
        match record.phase {
            Phase::Estimation => {
                estimation_excess[i] = record.realized_cost - record.oracle_cost;
            }
            Phase::Control => {
                let key = cost_schedule.round_key(record.t);
                let action = record.action.expect("control rounds carry an action");
                let best_action = report.oracle_actions[i];
                let ce_chosen = expected_ce_cost(record.epoch, key, action)?;
                let ce_best = expected_ce_cost(record.epoch, key, best_action)?;
                bandit_excess[i] = ce_chosen - ce_best;
                noise_residual[i] = record.realized_cost - ce_chosen;
                ce_gap[i] = ce_best - record.oracle_cost;
                ce_gap_by_epoch[record.epoch] += ce_gap[i];
            }
        }
    }

    let totals = [
        estimation_excess.iter().sum::<f64>(),
        bandit_excess.iter().sum::<f64>(),
        noise_residual.iter().sum::<f64>(),
        ce_gap.iter().sum::<f64>(),
    ];
    let sum: f64 = totals.iter().sum();
    let tolerance = 1e-6 * (1.0 + report.regret.abs());
    if (sum - report.regret).abs() > tolerance {
        return Err(Error::numerical(format!(
            "regret decomposition sums to {sum:.12e} but the run's regret is {:.12e}",
            report.regret
        )));
    }
    Ok(RegretDecomposition {
        estimation_excess,
        bandit_excess,
        noise_residual,
        ce_gap,
        ce_gap_by_epoch,
        totals,
        regret: report.regret,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_random_instance, InstanceParams};
    use approx::assert_relative_eq;

    fn instance(seed: u64, sigma: f64) -> SystemInstance {
        generate_random_instance(
            &InstanceParams {
                state_dim: 2,
                block_widths: vec![1; 3],
                budget: 2,
                spectral_radius: 0.9,
                sigma,
            },
            seed,
        )
        .unwrap()
    }

    fn config(horizon: usize, n_steps: usize, seed: u64) -> RunConfig {
        RunConfig {
            tau1: Tau1Mode::Fixed(1),
            ..RunConfig::new(horizon, n_steps, seed)
        }
    }

    #[test]
    fn schedule_matches_worked_examples() {
        let s = build_schedule(100, 2, 2).unwrap();
        assert_eq!(s.epoch_count(), 3);
        assert_eq!(s.tau2(), 29);
        assert_eq!(s.control_rounds_in_epoch(0), 29);
        assert_eq!(s.control_rounds_in_epoch(2), 30);
        assert_eq!(s.estimation_round_count(), 12);
        assert_eq!(s.control_round_count(), 88);

        let s = build_schedule(16, 1, 1).unwrap();
        assert_eq!(s.epoch_count(), 4);
        assert_eq!(s.tau2(), 3);
        for epoch in 0..4 {
            assert_eq!(s.control_rounds_in_epoch(epoch), 3);
        }

        assert!(matches!(
            build_schedule(10, 5, 2),
            Err(Error::InfeasibleSchedule(_))
        ));
    }

    #[test]
    fn schedule_covers_every_round_exactly_once() {
        for (t, tau1, p) in [(100, 2, 2), (16, 1, 1), (2, 1, 1), (37, 3, 2), (1601, 4, 3)] {
            let s = build_schedule(t, tau1, p).unwrap();
            let mut est = 0;
            let mut ctrl = 0;
            let mut last_epoch = 0;
            for round in 1..=t {
                match s.phase(round) {
                    RoundPhase::Estimation { epoch, group } => {
                        assert!(group < p);
                        assert!(epoch >= last_epoch);
                        last_epoch = epoch;
                        est += 1;
                    }
                    RoundPhase::Control { epoch } => {
                        assert!(epoch >= last_epoch);
                        last_epoch = epoch;
                        ctrl += 1;
                    }
                }
            }
            assert_eq!(est, s.estimation_round_count());
            assert_eq!(ctrl, s.control_round_count());
            assert_eq!(est + ctrl, t);
            assert_eq!(est, s.epoch_count() * tau1 * p);
            // Boundaries advance by tau1 within an epoch's estimation blocks.
            for epoch in 0..s.epoch_count() {
                for j in 0..p {
                    assert_eq!(s.boundary(epoch, j + 1), s.boundary(epoch, j) + tau1);
                }
            }
        }
    }

    #[test]
    fn theoretical_tau1_matches_frozen_arithmetic() {
        let z_b = exploration_state_ceiling(3, 4, 5, 1000, 1.0, 2.0, 0.05, 2.0, 0.5, 1.5);
        assert_relative_eq!(z_b, 2528180.263236912, epsilon = 1e-9);
        let tau1 =
            theoretical_tau1(3, 4, 2, 5, 1000, 1.0, 1.0, 2.0, 0.05, 0.05, 2.0, 0.5, 1.5).unwrap();
        assert_eq!(tau1, 20355642);
        // Larger delta shrinks the logarithms.
        let relaxed =
            theoretical_tau1(3, 4, 2, 5, 1000, 1.0, 1.0, 2.0, 0.05, 0.999, 2.0, 0.5, 1.5).unwrap();
        assert_eq!(relaxed, 18175936);
        assert!(relaxed < tau1);
        // Doubling epsilon0 divides by about four.
        let doubled =
            theoretical_tau1(3, 4, 2, 5, 1000, 1.0, 1.0, 2.0, 0.10, 0.05, 2.0, 0.5, 1.5).unwrap();
        assert_eq!(doubled, 5088911);
        let ratio = tau1 as f64 / doubled as f64;
        assert!((ratio - 4.0).abs() < 1e-4, "ratio {ratio}");
        // The oracle-side constant must be estimated first.
        assert!(
            theoretical_tau1(3, 4, 2, 5, 1000, 1.0, 1.0, 2.0, 0.0, 0.05, 2.0, 0.5, 1.5).is_err()
        );
    }

    #[test]
    fn practical_tau1_scales_ceil_log() {
        assert_eq!(practical_tau1(1, 200).unwrap(), 6);
        assert_eq!(practical_tau1(1, 400).unwrap(), 6);
        assert_eq!(practical_tau1(1, 800).unwrap(), 7);
        assert_eq!(practical_tau1(1, 1600).unwrap(), 8);
        assert_eq!(practical_tau1(3, 1600).unwrap(), 24);
        assert_eq!(practical_tau1(2, 1).unwrap(), 2);
        assert!(practical_tau1(0, 100).is_err());
    }

    #[test]
    fn oracle_costs_match_brute_force_scalars() {
        // Three scalar actuators, pick one: each arm is a scalar LQR whose
        // optimal cost is checkable by a 1-dimensional recursion per arm.
        let inst = generate_random_instance(
            &InstanceParams {
                state_dim: 1,
                block_widths: vec![1; 3],
                budget: 1,
                spectral_radius: 0.6,
                sigma: 1.3,
            },
            5,
        )
        .unwrap();
        let sched = CostSchedule::constant_identity(10, 1, 3, 1.0, 2.0, 1.0).unwrap();
        let costs = oracle_round_costs(&inst, &sched, 4, 1).unwrap();
        assert_eq!(costs.len(), 3);
        let a = inst.a()[(0, 0)];
        for (subset, cost) in &costs {
            let b = inst.b()[(0, subset.indices()[0])];
            // Scalar Riccati backward from p = 2.
            let mut p = 2.0;
            let mut trace_sum = 0.0;
            for _ in 0..4 {
                trace_sum += p;
                p = 1.0 + a * p * a - (a * p * b) * (a * p * b) / (b * p * b + 1.0);
            }
            let expected = inst.sigma() * inst.sigma() * trace_sum;
            assert_relative_eq!(*cost, expected, epsilon = 1e-10);
        }
        // Full-budget selection degenerates to the full-B problem.
        let full = generate_random_instance(
            &InstanceParams {
                state_dim: 2,
                block_widths: vec![1; 2],
                budget: 2,
                spectral_radius: 0.7,
                sigma: 1.0,
            },
            6,
        )
        .unwrap();
        let sched2 = CostSchedule::constant_identity(5, 2, 2, 1.0, 2.0, 1.0).unwrap();
        let costs2 = oracle_round_costs(&full, &sched2, 3, 1).unwrap();
        assert_eq!(costs2.len(), 1);
        let direct = riccati_backward(
            full.a(),
            full.b(),
            &DMatrix::identity(2, 2),
            &(DMatrix::identity(2, 2) * 2.0),
            &DMatrix::identity(2, 2),
            3,
        )
        .unwrap();
        assert_relative_eq!(
            costs2[0].1,
            optimal_expected_cost(&direct, 1.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn duplicate_actuator_blocks_give_symmetric_costs() {
        // Hand-built system with two identical actuator columns: swapping
        // them inside a subset cannot change the oracle cost. Depth 2 is
        // needed because [b0 b0] alone is rank one.
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.2, 0.4]);
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let widths = vec![1usize, 1, 1];
        let identity = DMatrix::identity(2, 2);
        let r1 = DMatrix::identity(1, 1);
        let mut gains = Vec::new();
        let mut kappa = 1.0f64;
        for j in 0..3 {
            let block = b.columns(j, 1).into_owned();
            let g = crate::model::compute_stabilizing_gain(&a, &block, &identity, &r1).unwrap();
            kappa = kappa.max(crate::linalg::spectral_norm(&g.gain));
            gains.push(g.gain);
        }
        let ell = 2;
        let mut nu = f64::INFINITY;
        for s in ActuatorSubset::enumerate(3, 2).unwrap() {
            let (bs, _) = model::restrict(&b, &DMatrix::identity(3, 3), &widths, &s).unwrap();
            nu = nu.min(model::controllability_margin(&a, &bs, ell).unwrap());
        }
        assert!(nu > 0.0, "hand-built system must be depth-2 controllable");
        let inst = SystemInstance::from_parts(
            a,
            b,
            widths,
            2,
            1.0,
            vec![vec![0], vec![1], vec![2]],
            gains,
            kappa,
            ell,
            nu,
            1.5,
            0.9,
        )
        .unwrap();
        let sched = CostSchedule::constant_identity(4, 2, 3, 1.0, 2.0, 1.0).unwrap();
        let costs = oracle_round_costs(&inst, &sched, 5, 1).unwrap();
        let find = |idx: &[usize]| {
            costs
                .iter()
                .find(|(s, _)| s.indices() == idx)
                .map(|(_, c)| *c)
                .unwrap()
        };
        assert_relative_eq!(find(&[0, 2]), find(&[1, 2]), epsilon = 1e-12);
    }

    #[test]
    fn noiseless_run_has_zero_cost_and_regret() {
        let inst = instance(3, 0.0);
        let sched = CostSchedule::constant_identity(40, 2, 3, 1.0, 2.0, 1.0).unwrap();
        let report = run_algorithm1(&inst, &sched, &config(40, 4, 9)).unwrap();
        assert_eq!(report.rounds.len(), 40);
        assert_eq!(report.regret, 0.0);
        assert_eq!(report.oracle_total, 0.0);
        assert!(report.rounds.iter().all(|r| r.realized_cost == 0.0));
        assert!(report.regret_per_round.iter().all(|&v| v == 0.0));
        assert!(report.rounds.iter().all(|r| !r.fallback));
    }

    #[test]
    fn runs_are_deterministic() {
        let inst = instance(4, 1.0);
        let sched = CostSchedule::constant_identity(60, 2, 3, 1.0, 2.0, 1.0).unwrap();
        let cfg = config(60, 5, 21);
        let a = run_algorithm1(&inst, &sched, &cfg).unwrap();
        let b = run_algorithm1(&inst, &sched, &cfg).unwrap();
        assert_eq!(a.regret.to_bits(), b.regret.to_bits());
        assert_eq!(a.control_actions, b.control_actions);
        for (x, y) in a.rounds.iter().zip(b.rounds.iter()) {
            assert_eq!(x.realized_cost.to_bits(), y.realized_cost.to_bits());
            assert_eq!(x.subset.indices(), y.subset.indices());
        }
        // A different seed changes the realized path.
        let c = run_algorithm1(&inst, &sched, &config(60, 5, 22)).unwrap();
        assert!(a.rounds[0].realized_cost != c.rounds[0].realized_cost);
    }

    #[test]
    fn phase_partition_and_epoch_accounting_hold() {
        let inst = instance(5, 1.0);
        let sched = CostSchedule::constant_identity(50, 2, 3, 1.0, 2.0, 1.0).unwrap();
        let report = run_algorithm1(&inst, &sched, &config(50, 3, 2)).unwrap();
        let est = report
            .rounds
            .iter()
            .filter(|r| r.phase == Phase::Estimation)
            .count();
        assert_eq!(est, report.schedule.estimation_round_count());
        assert_eq!(
            report.rounds.len() - est,
            report.schedule.control_round_count()
        );
        assert_eq!(report.estimates.len(), report.schedule.epoch_count());
        for (i, e) in report.estimates.iter().enumerate() {
            assert_eq!(e.epoch, i + 1);
        }
        assert_eq!(
            report.control_actions.len(),
            report.schedule.control_round_count()
        );
        // Time-invariant costs make the comparator constant.
        assert_eq!(report.oracle_hardness(), 1);
    }

    #[test]
    fn control_rounds_respect_oracle_dominance() {
        let inst = instance(6, 1.0);
        let sched = CostSchedule::constant_identity(60, 2, 3, 1.0, 2.0, 1.0).unwrap();
        let report = run_algorithm1(&inst, &sched, &config(60, 4, 13)).unwrap();
        let oracle = OracleCostTable::new(&inst, &sched, 4, 60).unwrap();
        for record in report.rounds.iter().filter(|r| r.phase == Phase::Control) {
            let action = record.action.unwrap();
            let costs = oracle.costs(record.t);
            let (_, best) = oracle.best(record.t);
            // Expected cost of the played CE gains >= subset optimum >= round optimum.
            let round = sched.round(record.t);
            let (gains, _) =
                ce_gains(&inst, &report.estimates[record.epoch], &record.subset, round, 4);
            let (b_s, r_s) = inst.restrict(&round.r, &record.subset).unwrap();
            let played = evaluate_policy(inst.a(), &b_s, &gains, &round.q, &round.qf, &r_s, 1.0)
                .unwrap()
                .expected_cost;
            assert!(played >= costs[action] - 1e-9 * (1.0 + costs[action].abs()));
            assert!(costs[action] >= best - 1e-12);
            assert_relative_eq!(record.oracle_cost, best, epsilon = 1e-15);
        }
    }

    #[test]
    fn oracle_total_is_minimal_over_fixed_sequences() {
        let inst = instance(7, 1.0);
        let horizon = 30;
        let sched =
            CostSchedule::sinusoidal_r(horizon, 2, 3, 1.0, 2.0, 1.0, 4.0, 7).unwrap();
        let oracle = OracleCostTable::new(&inst, &sched, 3, horizon).unwrap();
        let j_star = oracle.oracle_total();
        let arms = oracle.subsets().len();
        let mut rng = stream(99, 1234);
        use rand::Rng;
        for _ in 0..10 {
            let total: f64 = (1..=horizon)
                .map(|t| oracle.costs(t)[rng.gen_range(0..arms)])
                .sum();
            assert!(total >= j_star - 1e-9);
        }
    }

    #[test]
    fn decomposition_sums_to_regret() {
        let inst = instance(8, 1.0);
        let sched = CostSchedule::constant_identity(80, 2, 3, 1.0, 2.0, 1.0).unwrap();
        let report = run_algorithm1(&inst, &sched, &config(80, 4, 31)).unwrap();
        let decomposition =
            regret_decomposition(&report, &inst, &sched, &report.estimates).unwrap();
        let sum: f64 = decomposition.totals.iter().sum();
        assert_relative_eq!(sum, report.regret, epsilon = 1e-6, max_relative = 1e-6);
        // Estimation rounds never contribute to the control-phase series.
        for record in &report.rounds {
            let i = record.t - 1;
            match record.phase {
                Phase::Estimation => {
                    assert_eq!(decomposition.bandit_excess[i], 0.0);
                    assert_eq!(decomposition.noise_residual[i], 0.0);
                    assert_eq!(decomposition.ce_gap[i], 0.0);
                }
                Phase::Control => {
                    assert_eq!(decomposition.estimation_excess[i], 0.0);
                    // The oracle subset's CE gains are suboptimal for it, so
                    // this gap is nonnegative round by round.
                    assert!(decomposition.ce_gap[i] >= -1e-9);
                }
            }
        }
        let wrong = &report.estimates[..report.estimates.len() - 1];
        assert!(regret_decomposition(&report, &inst, &sched, wrong).is_err());
    }

    #[test]
    fn perfect_estimates_zero_the_ce_gap() {
        let inst = instance(9, 1.0);
        let sched = CostSchedule::constant_identity(60, 2, 3, 1.0, 2.0, 1.0).unwrap();
        let mut cfg = config(60, 4, 17);
        cfg.estimator = EstimatorMode::OracleTruth;
        let report = run_algorithm1(&inst, &sched, &cfg).unwrap();
        let decomposition =
            regret_decomposition(&report, &inst, &sched, &report.estimates).unwrap();
        assert!(decomposition.totals[3].abs() <= 1e-8);
        assert!(decomposition.ce_gap.iter().all(|v| v.abs() <= 1e-9));
    }

    #[test]
    fn all_estimation_run_puts_all_regret_in_the_first_term() {
        // T = 2, tau1 = 1, p = 1 gives two epochs of pure estimation and no
        // control rounds at all.
        let inst = generate_random_instance(
            &InstanceParams {
                state_dim: 2,
                block_widths: vec![2],
                budget: 1,
                spectral_radius: 0.8,
                sigma: 1.0,
            },
            10,
        )
        .unwrap();
        let sched = CostSchedule::constant_identity(2, 2, 2, 1.0, 2.0, 1.0).unwrap();
        let report = run_algorithm1(&inst, &sched, &config(2, 3, 5)).unwrap();
        assert_eq!(report.schedule.control_round_count(), 0);
        assert_eq!(report.control_actions.len(), 0);
        let decomposition =
            regret_decomposition(&report, &inst, &sched, &report.estimates).unwrap();
        assert_eq!(decomposition.totals[1], 0.0);
        assert_eq!(decomposition.totals[2], 0.0);
        assert_eq!(decomposition.totals[3], 0.0);
        assert_relative_eq!(
            decomposition.totals[0],
            report.regret,
            epsilon = 1e-12,
            max_relative = 1e-12
        );
    }

    #[test]
    fn fallback_gain_respects_group_overlap() {
        let inst = generate_random_instance(
            &InstanceParams {
                state_dim: 2,
                block_widths: vec![1; 4],
                budget: 2,
                spectral_radius: 0.9,
                sigma: 1.0,
            },
            12,
        )
        .unwrap();
        assert_eq!(inst.partition(), &[vec![0, 1], vec![2, 3]]);
        // Subset equal to a group reproduces that group's gain exactly.
        let g0 = inst.group_subset(0);
        assert_eq!(&fallback_gain(&inst, &g0), inst.stabilizing_gain(0));
        // A straddling subset ties 1-1; the tie goes to group 0, actuator 2's
        // row is zero.
        let straddle = ActuatorSubset::new(vec![1, 2], 4).unwrap();
        let k = fallback_gain(&inst, &straddle);
        let k0 = inst.stabilizing_gain(0);
        assert_eq!(k.row(0), k0.row(1));
        assert!(k.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ce_gains_from_truth_match_optimal_gains() {
        let inst = instance(13, 1.0);
        let sched = CostSchedule::constant_identity(4, 2, 3, 1.0, 2.0, 1.0).unwrap();
        let round = sched.round(1);
        let estimate = oracle_estimate(&inst, 1.0, 1);
        for subset in inst.admissible_subsets().unwrap() {
            let (gains, fallback) = ce_gains(&inst, &estimate, &subset, round, 4);
            assert!(!fallback);
            let (b_s, r_s) = inst.restrict(&round.r, &subset).unwrap();
            let direct =
                riccati_backward(inst.a(), &b_s, &round.q, &round.qf, &r_s, 4).unwrap();
            for (g, d) in gains.iter().zip(direct.gains.iter()) {
                assert_relative_eq!((g - d).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ce_gap_per_epoch_decays_on_median() {
        // More exploration data per epoch should shrink the price paid for
        // estimation error. Compare the first and last epochs' per-round CE
        // gap medians across seeds.
        let inst = instance(14, 1.0);
        let sched = CostSchedule::constant_identity(240, 2, 3, 1.0, 2.0, 1.0).unwrap();
        let mut first = Vec::new();
        let mut last = Vec::new();
        for seed in 0..20 {
            let report = run_algorithm1(&inst, &sched, &config(240, 4, 300 + seed)).unwrap();
            let epochs = report.schedule.epoch_count();
            assert!(epochs >= 2, "need at least two epochs, got {epochs}");
            let d = regret_decomposition(&report, &inst, &sched, &report.estimates).unwrap();
            let per_round = |e: usize| {
                d.ce_gap_by_epoch[e] / report.schedule.control_rounds_in_epoch(e) as f64
            };
            first.push(per_round(0));
            last.push(per_round(epochs - 1));
        }
        first.sort_by(|a, b| a.partial_cmp(b).unwrap());
        last.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(
            last[10] <= first[10],
            "median per-round CE gap grew: {} -> {}",
            first[10],
            last[10]
        );
    }

    #[test]
    fn invalid_run_configs_are_rejected() {
        let inst = instance(15, 1.0);
        let sched = CostSchedule::constant_identity(20, 2, 3, 1.0, 2.0, 1.0).unwrap();
        let mut cfg = config(40, 3, 1);
        // Cost schedule shorter than the run.
        assert!(run_algorithm1(&inst, &sched, &cfg).is_err());
        cfg.horizon = 20;
        cfg.lambda = 0.0;
        assert!(run_algorithm1(&inst, &sched, &cfg).is_err());
        cfg.lambda = 1.0;
        cfg.n_steps = 0;
        assert!(run_algorithm1(&inst, &sched, &cfg).is_err());
        cfg.n_steps = 3;
        cfg.tau1 = Tau1Mode::Fixed(10);
        // T = 20 = 10 * 2 groups: estimation fills the whole horizon, and
        // feasibility demands strictly more rounds than tau1 * p.
        assert!(matches!(
            run_algorithm1(&inst, &sched, &cfg),
            Err(Error::InfeasibleSchedule(_))
        ));
        // Mismatched cost dimensions.
        let bad = CostSchedule::constant_identity(20, 3, 3, 1.0, 2.0, 1.0).unwrap();
        cfg.tau1 = Tau1Mode::Fixed(1);
        assert!(run_algorithm1(&inst, &bad, &cfg).is_err());
    }
}
