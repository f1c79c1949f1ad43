//! System instances and cost schedules.
//!
//! An instance is a linear system `x_{k+1} = A x_k + B_S u_k + w_k` with
//! `w_k ~ N(0, sigma^2 I)`, where the input matrix `B` is partitioned into
//! column blocks, one per actuator. A controller may drive at most `H`
//! actuators at a time; choosing a subset `S` keeps the corresponding column
//! blocks of `B` and the matching principal blocks of the input cost `R`.
//!
//! Instances are certified at construction: every size-`H` subset has a
//! positive controllability margin at depth `ell`, every actuator group has a
//! known stabilizing gain, and the group closed loops satisfy a measured
//! geometric envelope `||(A + B_G K_G)^k|| <= zeta0 * eta0^k`.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// Hard cap on the number of enumerable actuator subsets.
pub const MAX_SUBSETS: usize = 1_000_000;

/// Retry budget for random instance generation.
const GENERATION_ATTEMPTS: usize = 32;

/// Largest power sampled when fitting the group closed-loop envelope.
const ENVELOPE_POWER_MAX: usize = 50;

/// Numerical floor below which a controllability margin counts as zero.
const MARGIN_FLOOR: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Actuator subsets
// ---------------------------------------------------------------------------

/// A set of actuator indices, stored strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActuatorSubset {
    indices: Vec<usize>,
}

impl ActuatorSubset {
    /// Build a subset of actuators out of `0..actuator_count`. The indices
    /// must be strictly increasing and in range.
    pub fn new(indices: Vec<usize>, actuator_count: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("actuator subset must be non-empty"));
        }
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::invalid(format!(
                    "actuator indices must be strictly increasing, got {indices:?}"
                )));
            }
        }
        if *indices.last().unwrap() >= actuator_count {
            return Err(Error::invalid(format!(
                "actuator index {} out of range (have {} actuators)",
                indices.last().unwrap(),
                actuator_count
            )));
        }
        Ok(ActuatorSubset { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Stable text label, e.g. `0-2` for `{0, 2}`. Used in CSV output.
    pub fn label(&self) -> String {
        self.indices
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    /// Enumerate all `choose(actuator_count, size)` subsets in lexicographic
    /// order. This fixed order doubles as the action-index bijection for the
    /// bandit. Errors when the count exceeds [`MAX_SUBSETS`].
    pub fn enumerate(actuator_count: usize, size: usize) -> Result<Vec<ActuatorSubset>> {
        if size == 0 || size > actuator_count {
            return Err(Error::invalid(format!(
                "cannot choose {size} of {actuator_count} actuators"
            )));
        }
        let count = binomial(actuator_count, size);
        if count > MAX_SUBSETS as u128 {
            return Err(Error::invalid(format!(
                "choose({actuator_count}, {size}) = {count} exceeds the cap of {MAX_SUBSETS} subsets"
            )));
        }
        let mut out = Vec::with_capacity(count as usize);
        let mut current: Vec<usize> = (0..size).collect();
        loop {
            out.push(ActuatorSubset {
                indices: current.clone(),
            });
            // Advance to the next combination in lexicographic order.
            let mut i = size;
            loop {
                if i == 0 {
                    return Ok(out);
                }
                i -= 1;
                if current[i] != i + actuator_count - size {
                    break;
                }
                if i == 0 {
                    return Ok(out);
                }
            }
            current[i] += 1;
            for j in i + 1..size {
                current[j] = current[j - 1] + 1;
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u128::from(u64::MAX) {
            return acc; // already hopeless versus any sane cap
        }
    }
    acc
}

/// Contiguous partition of `0..actuator_count` into groups of at most
/// `group_size` actuators: `{0..g-1}, {g..2g-1}, ...` with a short tail group
/// when `group_size` does not divide `actuator_count`.
pub fn default_partition(actuator_count: usize, group_size: usize) -> Vec<Vec<usize>> {
    assert!(group_size >= 1, "group size must be at least 1");
    (0..actuator_count)
        .collect::<Vec<_>>()
        .chunks(group_size)
        .map(|c| c.to_vec())
        .collect()
}

/// Restrict the input matrix and input cost to an actuator subset:
/// keep the column blocks of `b` and the principal blocks of `r` that belong
/// to the selected actuators. `block_widths[i]` is the input width of
/// actuator `i`; `b` is `n x m` and `r` is `m x m` with `m` the total width.
pub fn restrict(
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    block_widths: &[usize],
    subset: &ActuatorSubset,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m: usize = block_widths.iter().sum();
    if b.ncols() != m {
        return Err(Error::invalid(format!(
            "input matrix has {} columns but block widths sum to {m}",
            b.ncols()
        )));
    }
    if r.nrows() != m || r.ncols() != m {
        return Err(Error::invalid(format!(
            "input cost is {}x{} but block widths sum to {m}",
            r.nrows(),
            r.ncols()
        )));
    }
    if subset.indices().last().copied().unwrap_or(0) >= block_widths.len() {
        return Err(Error::invalid("subset indexes past the last actuator"));
    }
    let offsets = column_offsets(block_widths);
    let cols: Vec<usize> = subset
        .indices()
        .iter()
        .flat_map(|&i| offsets[i]..offsets[i] + block_widths[i])
        .collect();
    let b_s = b.select_columns(cols.iter());
    let r_s = r.select_columns(cols.iter()).select_rows(cols.iter());
    Ok((b_s, r_s))
}

fn column_offsets(block_widths: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(block_widths.len());
    let mut acc = 0;
    for &w in block_widths {
        offsets.push(acc);
        acc += w;
    }
    offsets
}

/// Controllability margin: the `n`-th largest singular value of the depth-`ell`
/// reachability matrix `[B_S, A B_S, ..., A^(ell-1) B_S]`. Zero when the
/// matrix has fewer than `n` columns or is rank deficient.
pub fn controllability_margin(a: &DMatrix<f64>, b_s: &DMatrix<f64>, ell: usize) -> Result<f64> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(Error::invalid("state matrix must be square"));
    }
    if b_s.nrows() != n {
        return Err(Error::invalid("input matrix row count must match state dim"));
    }
    if ell == 0 {
        return Err(Error::invalid("reachability depth must be at least 1"));
    }
    let ms = b_s.ncols();
    let mut reach = DMatrix::zeros(n, ell * ms);
    let mut block = b_s.clone();
    for j in 0..ell {
        reach.view_mut((0, j * ms), (n, ms)).copy_from(&block);
        if j + 1 < ell {
            block = a * &block;
        }
    }
    Ok(linalg::kth_singular_value(&reach, n))
}

// ---------------------------------------------------------------------------
// Stabilizing gains
// ---------------------------------------------------------------------------

/// Result of the infinite-horizon discrete Riccati fixed point for `(A, B)`.
#[derive(Debug, Clone)]
pub struct StabilizingGain {
    /// Static feedback `u = K x`, shaped `m x n`.
    pub gain: DMatrix<f64>,
    /// The fixed-point value matrix.
    pub value: DMatrix<f64>,
    /// Spectral radius of `A + B K`.
    pub closed_loop_radius: f64,
    /// Iterations used by the value recursion.
    pub iterations: usize,
}

/// Iterate the discrete-time Riccati map
/// `P <- Q + A^T P A - A^T P B (B^T P B + R)^-1 B^T P A`
/// from `P = Q` until the Frobenius update norm drops below `1e-10`, then
/// read off `K = -(B^T P B + R)^-1 B^T P A`. Errors when the iteration does
/// not converge within 10000 steps (e.g. an unstabilizable pair) or the
/// resulting closed loop is not strictly stable.
pub fn compute_stabilizing_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<StabilizingGain> {
    const TOL: f64 = 1e-10;
    const BUDGET: usize = 10_000;
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.nrows() != n || !q.is_square() {
        return Err(Error::invalid("inconsistent dimensions for gain synthesis"));
    }
    if r.nrows() != m || !r.is_square() {
        return Err(Error::invalid("input cost dimension must match input width"));
    }

    let mut p = q.clone();
    let mut iterations = 0;
    loop {
        let pb = &p * b;
        let mut gram = b.transpose() * &pb + r;
        linalg::symmetrize(&mut gram);
        let chol = nalgebra::linalg::Cholesky::new(gram).ok_or_else(|| {
            Error::numerical(format!(
                "input Gram matrix lost positivity at value iteration {iterations}"
            ))
        })?;
        let bpa = pb.transpose() * a; // B^T P A
        let gain_part = chol.solve(&bpa); // (B^T P B + R)^-1 B^T P A
        let mut next = q + a.transpose() * &p * a - bpa.transpose() * &gain_part;
        linalg::symmetrize(&mut next);
        if !linalg::all_finite(&next) {
            return Err(Error::numerical(
                "value iteration diverged to non-finite entries (pair likely unstabilizable)",
            ));
        }
        let delta = (&next - &p).norm();
        p = next;
        iterations += 1;
        if delta <= TOL {
            break;
        }
        if iterations >= BUDGET {
            return Err(Error::numerical(format!(
                "value iteration did not converge within {BUDGET} steps (last update {delta:.3e})"
            )));
        }
    }

    let pb = &p * b;
    let mut gram = b.transpose() * &pb + r;
    linalg::symmetrize(&mut gram);
    let chol = nalgebra::linalg::Cholesky::new(gram)
        .ok_or_else(|| Error::numerical("input Gram matrix not positive definite at fixed point"))?;
    let gain = -chol.solve(&(pb.transpose() * a));
    let closed_loop_radius = linalg::spectral_radius(&(a + b * &gain));
    if closed_loop_radius >= 1.0 - 1e-8 {
        return Err(Error::numerical(format!(
            "synthesized gain is not strictly stabilizing (closed-loop radius {closed_loop_radius:.12})"
        )));
    }
    Ok(StabilizingGain {
        gain,
        value: p,
        closed_loop_radius,
        iterations,
    })
}

// ---------------------------------------------------------------------------
// Cost schedules
// ---------------------------------------------------------------------------

/// The cost matrices in force during one round: stage cost `Q`, terminal cost
/// `Q_f`, and full-width input cost `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRound {
    pub q: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Per-round cost matrices for rounds `1..=horizon`, deduplicated: rounds
/// sharing matrices point at one stored [`CostRound`], which downstream
/// caches key on.
#[derive(Debug, Clone)]
pub struct CostSchedule {
    horizon: usize,
    distinct: Vec<CostRound>,
    round_index: Vec<usize>,
}

impl CostSchedule {
    /// A schedule using the same cost matrices in every round.
    pub fn constant(horizon: usize, q: DMatrix<f64>, qf: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("schedule horizon must be at least 1"));
        }
        let round = validated_round(q, qf, r)?;
        Ok(CostSchedule {
            horizon,
            distinct: vec![round],
            round_index: vec![0; horizon],
        })
    }

    /// Identity-family constant schedule: `Q = q_scale I`, `Q_f = qf_scale I`,
    /// `R = r_scale I`.
    pub fn constant_identity(
        horizon: usize,
        state_dim: usize,
        input_dim: usize,
        q_scale: f64,
        qf_scale: f64,
        r_scale: f64,
    ) -> Result<Self> {
        CostSchedule::constant(
            horizon,
            DMatrix::identity(state_dim, state_dim) * q_scale,
            DMatrix::identity(state_dim, state_dim) * qf_scale,
            DMatrix::identity(input_dim, input_dim) * r_scale,
        )
    }

    /// Identity-family schedule whose input cost oscillates over rounds:
    /// `R^(t) = (r_base + r_amplitude * (1 + sin(2 pi (t-1)/period)) / 2) I`,
    /// repeating with the given period, while `Q` and `Q_f` stay constant.
    /// Varying the input price over rounds moves the oracle-best subset
    /// around, which is how time-varying comparator sequences are exercised.
    pub fn sinusoidal_r(
        horizon: usize,
        state_dim: usize,
        input_dim: usize,
        q_scale: f64,
        qf_scale: f64,
        r_base: f64,
        r_amplitude: f64,
        period: usize,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("schedule horizon must be at least 1"));
        }
        if period == 0 {
            return Err(Error::invalid("sinusoidal period must be at least 1"));
        }
        if r_amplitude < 0.0 {
            return Err(Error::invalid("sinusoidal amplitude must be non-negative"));
        }
        let mut distinct = Vec::with_capacity(period);
        for phase in 0..period {
            let angle = 2.0 * std::f64::consts::PI * phase as f64 / period as f64;
            let scale = r_base + r_amplitude * (1.0 + angle.sin()) / 2.0;
            distinct.push(validated_round(
                DMatrix::identity(state_dim, state_dim) * q_scale,
                DMatrix::identity(state_dim, state_dim) * qf_scale,
                DMatrix::identity(input_dim, input_dim) * scale,
            )?);
        }
        let round_index = (0..horizon).map(|t| t % period).collect();
        Ok(CostSchedule {
            horizon,
            distinct,
            round_index,
        })
    }

    /// Build a schedule that cycles through explicit cost rounds: round `t`
    /// uses entry `(t - 1) mod rounds.len()`.
    pub fn cyclic(
        horizon: usize,
        rounds: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("schedule horizon must be at least 1"));
        }
        if rounds.is_empty() {
            return Err(Error::invalid("need at least one cost round"));
        }
        let mut distinct = Vec::with_capacity(rounds.len());
        for (q, qf, r) in rounds {
            distinct.push(validated_round(q, qf, r)?);
        }
        let period = distinct.len();
        let round_index = (0..horizon).map(|t| t % period).collect();
        Ok(CostSchedule {
            horizon,
            distinct,
            round_index,
        })
    }

    /// Number of rounds covered by the schedule.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Cost matrices for round `t` (1-based).
    pub fn round(&self, t: usize) -> &CostRound {
        &self.distinct[self.round_key(t)]
    }

    /// Index into [`Self::distinct`] for round `t` (1-based). Rounds with the
    /// same key share matrices, so per-round caches can key on this.
    pub fn round_key(&self, t: usize) -> usize {
        assert!(t >= 1 && t <= self.horizon, "round {t} outside 1..={}", self.horizon);
        self.round_index[t - 1]
    }

    /// The deduplicated cost rounds.
    pub fn distinct(&self) -> &[CostRound] {
        &self.distinct
    }
}

fn validated_round(q: DMatrix<f64>, qf: DMatrix<f64>, r: DMatrix<f64>) -> Result<CostRound> {
    const SYM_TOL: f64 = 1e-9;
    let check_sym = |m: &DMatrix<f64>, name: &str| -> Result<()> {
        if !m.is_square() {
            return Err(Error::invalid(format!("{name} must be square")));
        }
        let asym = (m - m.transpose()).norm();
        if asym > SYM_TOL * (1.0 + m.norm()) {
            return Err(Error::invalid(format!(
                "{name} is not symmetric (asymmetry {asym:.3e})"
            )));
        }
        Ok(())
    };
    check_sym(&q, "stage cost Q")?;
    check_sym(&qf, "terminal cost Q_f")?;
    check_sym(&r, "input cost R")?;
    if qf.nrows() != q.nrows() {
        return Err(Error::invalid("Q and Q_f must have matching dimension"));
    }
    let mut q = q;
    let mut qf = qf;
    let mut r = r;
    linalg::symmetrize(&mut q);
    linalg::symmetrize(&mut qf);
    linalg::symmetrize(&mut r);
    let q_min = linalg::min_symmetric_eigenvalue(&q);
    if q_min < 1.0 - 1e-9 {
        return Err(Error::invalid(format!(
            "stage cost Q must satisfy lambda_min(Q) >= 1, got {q_min:.6}"
        )));
    }
    let r_min = linalg::min_symmetric_eigenvalue(&r);
    if r_min < 1.0 - 1e-9 {
        return Err(Error::invalid(format!(
            "input cost R must satisfy lambda_min(R) >= 1, got {r_min:.6}"
        )));
    }
    let qf_min = linalg::min_symmetric_eigenvalue(&qf);
    if qf_min <= 0.0 {
        return Err(Error::invalid(format!(
            "terminal cost Q_f must be positive definite, got lambda_min {qf_min:.6}"
        )));
    }
    Ok(CostRound { q, qf, r })
}

// ---------------------------------------------------------------------------
// System instances
// ---------------------------------------------------------------------------

/// Parameters for random instance generation.
#[derive(Debug, Clone)]
pub struct InstanceParams {
    /// State dimension `n`.
    pub state_dim: usize,
    /// Input width of each actuator; the number of actuators is the length.
    pub block_widths: Vec<usize>,
    /// Actuation budget `H`: subsets of exactly `H` actuators are admissible.
    pub budget: usize,
    /// Target spectral radius for the drawn `A` (may exceed 1).
    pub spectral_radius: f64,
    /// Process noise standard deviation `sigma` (`W = sigma^2 I`).
    pub sigma: f64,
}

/// A certified system instance. See the module docs for the invariants
/// established at construction.
#[derive(Debug, Clone)]
pub struct SystemInstance {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    block_widths: Vec<usize>,
    col_offsets: Vec<usize>,
    budget: usize,
    sigma: f64,
    partition: Vec<Vec<usize>>,
    stabilizing_gains: Vec<DMatrix<f64>>,
    kappa: f64,
    ell: usize,
    nu: f64,
    zeta0: f64,
    eta0: f64,
}

impl SystemInstance {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn actuator_count(&self) -> usize {
        self.block_widths.len()
    }

    /// Total input width `m` (sum of the block widths).
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn block_widths(&self) -> &[usize] {
        &self.block_widths
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Actuator groups used by the exploration phases.
    pub fn partition(&self) -> &[Vec<usize>] {
        &self.partition
    }

    pub fn group_count(&self) -> usize {
        self.partition.len()
    }

    /// The group as a subset object.
    pub fn group_subset(&self, group: usize) -> ActuatorSubset {
        ActuatorSubset::new(self.partition[group].clone(), self.actuator_count())
            .expect("partition groups are valid subsets by construction")
    }

    /// Stabilizing gain for group `j`, shaped `m_Gj x n`.
    pub fn stabilizing_gain(&self, group: usize) -> &DMatrix<f64> {
        &self.stabilizing_gains[group]
    }

    /// `kappa = max(1, max_j ||K_Gj||)`; the exploration dither has
    /// covariance `2 sigma^2 kappa^2 I`.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Certified reachability depth.
    pub fn ell(&self) -> usize {
        self.ell
    }

    /// Worst-case controllability margin over all budget-sized subsets at
    /// depth [`Self::ell`].
    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Envelope coefficient for the group closed loops:
    /// `||(A + B_G K_G)^k|| <= zeta0 * eta0^k` on the sampled power range.
    pub fn zeta0(&self) -> f64 {
        self.zeta0
    }

    /// Envelope rate for the group closed loops (strictly below 1).
    pub fn eta0(&self) -> f64 {
        self.eta0
    }

    /// Total input width of a subset.
    pub fn subset_width(&self, subset: &ActuatorSubset) -> usize {
        subset.indices().iter().map(|&i| self.block_widths[i]).sum()
    }

    /// Column block of `B` for a single actuator.
    pub fn b_block(&self, actuator: usize) -> DMatrix<f64> {
        self.b
            .columns(self.col_offsets[actuator], self.block_widths[actuator])
            .into_owned()
    }

    /// `B_S`: the columns of `B` for the selected actuators.
    pub fn b_for_subset(&self, subset: &ActuatorSubset) -> DMatrix<f64> {
        let cols: Vec<usize> = subset
            .indices()
            .iter()
            .flat_map(|&i| self.col_offsets[i]..self.col_offsets[i] + self.block_widths[i])
            .collect();
        self.b.select_columns(cols.iter())
    }

    /// `(B_S, R_S)` for a subset under a full-width input cost `r`.
    pub fn restrict(&self, r: &DMatrix<f64>, subset: &ActuatorSubset) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        restrict(&self.b, r, &self.block_widths, subset)
    }

    /// All admissible subsets (size = budget) in lexicographic order.
    pub fn admissible_subsets(&self) -> Result<Vec<ActuatorSubset>> {
        ActuatorSubset::enumerate(self.actuator_count(), self.budget)
    }

    /// Rebuild an instance from stored parts, re-certifying the invariants
    /// that generation established. Used when loading from disk.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        block_widths: Vec<usize>,
        budget: usize,
        sigma: f64,
        partition: Vec<Vec<usize>>,
        stabilizing_gains: Vec<DMatrix<f64>>,
        kappa: f64,
        ell: usize,
        nu: f64,
        zeta0: f64,
        eta0: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(Error::invalid("state matrix must be square"));
        }
        let q_act = block_widths.len();
        let m: usize = block_widths.iter().sum();
        if q_act == 0 || block_widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("every actuator needs width at least 1"));
        }
        if b.nrows() != n || b.ncols() != m {
            return Err(Error::invalid(format!(
                "input matrix must be {n}x{m}, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if budget == 0 || budget > q_act {
            return Err(Error::invalid(format!(
                "budget must lie in 1..={q_act}, got {budget}"
            )));
        }
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(Error::invalid("noise level must be finite and non-negative"));
        }
        if !(kappa >= 1.0) {
            return Err(Error::invalid("kappa must be at least 1"));
        }
        if ell == 0 || ell > n {
            return Err(Error::invalid("reachability depth must lie in 1..=n"));
        }
        if !(nu > 0.0) {
            return Err(Error::invalid("controllability margin must be positive"));
        }
        if !(zeta0 >= 1.0) || !(eta0 > 0.0 && eta0 < 1.0) {
            return Err(Error::invalid("group envelope requires zeta0 >= 1 and 0 < eta0 < 1"));
        }

        // The partition must split 0..q into groups no larger than the budget.
        let mut seen = vec![false; q_act];
        for group in &partition {
            if group.is_empty() || group.len() > budget {
                return Err(Error::invalid("each group must be non-empty and at most budget-sized"));
            }
            for &i in group {
                if i >= q_act || seen[i] {
                    return Err(Error::invalid("partition must cover each actuator exactly once"));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::invalid("partition must cover every actuator"));
        }
        if stabilizing_gains.len() != partition.len() {
            return Err(Error::invalid("need exactly one stabilizing gain per group"));
        }

        let col_offsets = column_offsets(&block_widths);
        let instance = SystemInstance {
            a,
            b,
            block_widths,
            col_offsets,
            budget,
            sigma,
            partition,
            stabilizing_gains,
            kappa,
            ell,
            nu,
            zeta0,
            eta0,
        };

        // Check gain shapes and strict stability of each group loop.
        for (j, gain) in instance.stabilizing_gains.iter().enumerate() {
            let subset = instance.group_subset(j);
            let width = instance.subset_width(&subset);
            if gain.nrows() != width || gain.ncols() != n {
                return Err(Error::invalid(format!(
                    "gain for group {j} must be {width}x{n}, got {}x{}",
                    gain.nrows(),
                    gain.ncols()
                )));
            }
            let loop_m = &instance.a + instance.b_for_subset(&subset) * gain;
            let radius = linalg::spectral_radius(&loop_m);
            if radius >= 1.0 - 1e-8 {
                return Err(Error::numerical(format!(
                    "group {j} closed loop is not strictly stable (radius {radius:.12})"
                )));
            }
        }

        // Re-verify the certified controllability margin.
        for subset in instance.admissible_subsets()? {
            let margin = controllability_margin(&instance.a, &instance.b_for_subset(&subset), instance.ell)?;
            if margin < instance.nu - 1e-9 * (1.0 + instance.nu) {
                return Err(Error::numerical(format!(
                    "subset {} has margin {margin:.3e} below the certified {:.3e}",
                    subset.label(),
                    instance.nu
                )));
            }
        }

        Ok(instance)
    }
}

/// Draw a random certified instance.
///
/// `A` has i.i.d. standard normal entries rescaled to the target spectral
/// radius; `B` has i.i.d. standard normal entries. Generation retries (up to
/// a fixed budget) until every budget-sized subset is controllable at some
/// depth `ell <= n` with positive margin and every default group admits a
/// stabilizing gain. The same seed always yields the same instance.
pub fn generate_random_instance(params: &InstanceParams, seed: u64) -> Result<SystemInstance> {
    let n = params.state_dim;
    let q_act = params.block_widths.len();
    let m: usize = params.block_widths.iter().sum();
    if n == 0 {
        return Err(Error::invalid("state dimension must be at least 1"));
    }
    if q_act == 0 || params.block_widths.iter().any(|&w| w == 0) {
        return Err(Error::invalid("every actuator needs width at least 1"));
    }
    if params.budget == 0 || params.budget > q_act {
        return Err(Error::invalid(format!(
            "budget must lie in 1..={q_act}, got {}",
            params.budget
        )));
    }
    if !(params.spectral_radius >= 0.0) || !params.spectral_radius.is_finite() {
        return Err(Error::invalid("spectral radius target must be finite and non-negative"));
    }
    if params.sigma < 0.0 || !params.sigma.is_finite() {
        return Err(Error::invalid("noise level must be finite and non-negative"));
    }
    let subsets = ActuatorSubset::enumerate(q_act, params.budget)?;
    let partition = default_partition(q_act, params.budget);

    let mut rng = rng::stream(seed, 0);
    let mut last_reason = String::from("no attempts made");
    for _attempt in 0..GENERATION_ATTEMPTS {
        // Draw A and rescale to the target spectral radius.
        let mut a = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let b = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng));
        if params.spectral_radius == 0.0 {
            a.fill(0.0);
        } else {
            let radius = linalg::spectral_radius(&a);
            if radius < 1e-12 {
                last_reason = "drawn state matrix had (numerically) zero spectral radius".into();
                continue;
            }
            a *= params.spectral_radius / radius;
        }

        // Find the smallest depth certifying every admissible subset.
        let mut certified: Option<(usize, f64)> = None;
        'depth: for ell in 1..=n {
            let mut nu = f64::INFINITY;
            for subset in &subsets {
                let cols: Vec<usize> = {
                    let offsets = column_offsets(&params.block_widths);
                    subset
                        .indices()
                        .iter()
                        .flat_map(|&i| offsets[i]..offsets[i] + params.block_widths[i])
                        .collect()
                };
                let b_s = b.select_columns(cols.iter());
                let margin = controllability_margin(&a, &b_s, ell)?;
                if margin <= MARGIN_FLOOR {
                    continue 'depth;
                }
                nu = nu.min(margin);
            }
            certified = Some((ell, nu));
            break;
        }
        let Some((ell, nu)) = certified else {
            last_reason = "some admissible subset stayed uncontrollable up to depth n".into();
            continue;
        };

        // Synthesize stabilizing gains for the default groups.
        let offsets = column_offsets(&params.block_widths);
        let mut gains = Vec::with_capacity(partition.len());
        let mut gain_failure = None;
        for group in &partition {
            let cols: Vec<usize> = group
                .iter()
                .flat_map(|&i| offsets[i]..offsets[i] + params.block_widths[i])
                .collect();
            let b_g = b.select_columns(cols.iter());
            let iq = DMatrix::identity(n, n);
            let ir = DMatrix::identity(cols.len(), cols.len());
            match compute_stabilizing_gain(&a, &b_g, &iq, &ir) {
                Ok(sg) => gains.push(sg.gain),
                Err(e) => {
                    gain_failure = Some(format!("group gain synthesis failed: {e}"));
                    break;
                }
            }
        }
        if let Some(reason) = gain_failure {
            last_reason = reason;
            continue;
        }

        let kappa = gains
            .iter()
            .map(linalg::spectral_norm)
            .fold(1.0f64, f64::max);

        // Fit the geometric envelope of the group closed loops.
        let mut samples = Vec::new();
        for (group, gain) in partition.iter().zip(&gains) {
            let cols: Vec<usize> = group
                .iter()
                .flat_map(|&i| offsets[i]..offsets[i] + params.block_widths[i])
                .collect();
            let loop_m = &a + b.select_columns(cols.iter()) * gain;
            let mut power = DMatrix::identity(n, n);
            for k in 0..=ENVELOPE_POWER_MAX {
                samples.push((k, linalg::spectral_norm(&power)));
                if k < ENVELOPE_POWER_MAX {
                    power = &power * &loop_m;
                }
            }
        }
        let (zeta0, eta0) = match linalg::geometric_envelope(&samples) {
            Ok(pair) => pair,
            Err(e) => {
                last_reason = format!("group envelope fit failed: {e}");
                continue;
            }
        };

        return SystemInstance::from_parts(
            a,
            b,
            params.block_widths.clone(),
            params.budget,
            params.sigma,
            partition,
            gains,
            kappa,
            ell,
            nu,
            zeta0,
            eta0,
        );
    }
    Err(Error::Generation {
        attempts: GENERATION_ATTEMPTS,
        reason: last_reason,
    })
}
