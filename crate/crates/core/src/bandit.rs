//! Exp3.S adversarial bandit over actuator subsets.
//!
//! Each admissible subset (an H-of-q combination, enumerated
//! lexicographically) is one arm. Realized LQR costs are mapped to bounded
//! rewards `r = 1 - min(cost, y_b)/y_b` with a fixed or running-max cost
//! ceiling `y_b`, and the sampler mixes exponential weights with uniform
//! exploration: `p_i = (1-gamma) w_i / sum(w) + gamma/|Q|`.
//!
//! The update is the standard Exp3.S rule: the chosen arm receives the
//! importance-weighted reward `x^ = r/p_i`, every arm's weight is refreshed as
//! `w_i <- w_i exp(gamma x^_i / |Q|) + (e alpha / |Q|) sum(w)`. Weights are
//! kept in log space (the per-round exponent is at most one because of the
//! probability floor, but products over long horizons overflow quickly).

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ActuatorSubset;

/// Cost-normalization policy for the reward map.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum CostCeiling {
    /// A fixed positive ceiling; larger costs are clipped.
    Fixed(f64),
    /// Running maximum of observed costs, raised before each normalization.
    Adaptive,
}

impl CostCeiling {
    fn initial(&self) -> Result<f64> {
        match *self {
            CostCeiling::Fixed(y) => {
                if !(y > 0.0) || !y.is_finite() {
                    return Err(Error::invalid(format!(
                        "fixed cost ceiling must be positive and finite, got {y}"
                    )));
                }
                Ok(y)
            }
            CostCeiling::Adaptive => Ok(0.0),
        }
    }
}

/// Exp3.S state over the admissible actuator subsets.
#[derive(Debug, Clone)]
pub struct Exp3s {
    subsets: Vec<ActuatorSubset>,
    log_weights: Vec<f64>,
    gamma: f64,
    alpha: f64,
    horizon: usize,
    ceiling: CostCeiling,
    y_b: f64,
    rounds_played: usize,
}

/// Exploration rate `gamma = min{1, sqrt(|Q| ln(|Q| T) / ((e-1) T))}`.
pub fn theoretical_gamma(action_count: usize, horizon: usize) -> f64 {
    let qt = (action_count * horizon) as f64;
    let raw =
        (action_count as f64 * qt.ln() / ((std::f64::consts::E - 1.0) * horizon as f64)).sqrt();
    raw.min(1.0)
}

impl Exp3s {
    /// Initialize over all H-of-q subsets with the theory-driven parameters
    /// `gamma = min{1, sqrt(|Q| ln(|Q|T)/((e-1)T))}` and `alpha = 1/T`.
    pub fn new(
        actuator_count: usize,
        subset_size: usize,
        horizon: usize,
        ceiling: CostCeiling,
    ) -> Result<Self> {
        Self::with_overrides(actuator_count, subset_size, horizon, ceiling, None, None)
    }

    /// Same as [`Exp3s::new`] but with explicit `gamma` / `alpha` overrides.
    pub fn with_overrides(
        actuator_count: usize,
        subset_size: usize,
        horizon: usize,
        ceiling: CostCeiling,
        gamma: Option<f64>,
        alpha: Option<f64>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("bandit horizon must be at least 1"));
        }
        let subsets = ActuatorSubset::enumerate(actuator_count, subset_size)?;
        let action_count = subsets.len();
        let gamma = match gamma {
            Some(g) => {
                if !(0.0..=1.0).contains(&g) || !g.is_finite() {
                    return Err(Error::invalid(format!(
                        "exploration rate must lie in [0, 1], got {g}"
                    )));
                }
                g
            }
            None => theoretical_gamma(action_count, horizon),
        };
        let alpha = match alpha {
            Some(a) => {
                if !(a >= 0.0) || !a.is_finite() {
                    return Err(Error::invalid(format!(
                        "weight-sharing rate must be nonnegative, got {a}"
                    )));
                }
                a
            }
            None => 1.0 / horizon as f64,
        };
        let y_b = ceiling.initial()?;
        Ok(Exp3s {
            log_weights: vec![0.0; action_count],
            subsets,
            gamma,
            alpha,
            horizon,
            ceiling,
            y_b,
            rounds_played: 0,
        })
    }

    /// Number of arms `|Q|`.
    pub fn action_count(&self) -> usize {
        self.subsets.len()
    }

    /// Horizon `T` the parameters were tuned for.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Exploration rate in use.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Weight-sharing rate in use.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Current cost ceiling (running maximum in adaptive mode).
    pub fn cost_ceiling(&self) -> f64 {
        self.y_b
    }

    /// Updates applied so far.
    pub fn rounds_played(&self) -> usize {
        self.rounds_played
    }

    /// The subset behind `action`.
    pub fn subset(&self, action: usize) -> &ActuatorSubset {
        &self.subsets[action]
    }

    /// All arms in index order.
    pub fn subsets(&self) -> &[ActuatorSubset] {
        &self.subsets
    }

    /// Inverse of the index bijection.
    pub fn index_of(&self, subset: &ActuatorSubset) -> Option<usize> {
        self.subsets
            .binary_search_by(|s| s.indices().cmp(subset.indices()))
            .ok()
    }

    /// Mixed sampling distribution `p_i = (1-gamma) w_i/sum(w) + gamma/|Q|`.
    pub fn probabilities(&self) -> Vec<f64> {
        let q = self.subsets.len();
        let lse = logsumexp(&self.log_weights);
        self.log_weights
            .iter()
            .map(|&lw| (1.0 - self.gamma) * (lw - lse).exp() + self.gamma / q as f64)
            .collect()
    }

    /// Draw an arm from the mixed distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let p = self.probabilities();
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    }

    /// Feed back the realized cost of the chosen arm.
    ///
    /// In adaptive mode the ceiling is raised to the cost before
    /// normalization, so the reward is computed against the updated ceiling.
    /// A zero ceiling (adaptive mode before any positive cost) yields reward
    /// zero by convention.
    pub fn update(&mut self, chosen: usize, cost: f64) -> Result<()> {
        if chosen >= self.subsets.len() {
            return Err(Error::invalid(format!("arm {chosen} out of range")));
        }
        if !cost.is_finite() || cost < 0.0 {
            return Err(Error::invalid(format!(
                "observed cost must be finite and nonnegative, got {cost}"
            )));
        }
        if let CostCeiling::Adaptive = self.ceiling {
            self.y_b = self.y_b.max(cost);
        }
        let reward = if self.y_b > 0.0 {
            1.0 - cost.min(self.y_b) / self.y_b
        } else {
            0.0
        };
        let q = self.subsets.len() as f64;
        let p_chosen = self.probabilities()[chosen];
        let x_hat = reward / p_chosen;

        let lse = logsumexp(&self.log_weights);
        // log of the shared mass (e * alpha / |Q|) * sum(w); -inf when alpha = 0.
        let shared = if self.alpha > 0.0 {
            1.0 + (self.alpha / q).ln() + lse
        } else {
            f64::NEG_INFINITY
        };
        for (i, lw) in self.log_weights.iter_mut().enumerate() {
            let boost = if i == chosen { self.gamma * x_hat / q } else { 0.0 };
            *lw = logsumexp2(*lw + boost, shared);
        }
        // The update is scale-equivariant (both terms are linear in the
        // overall weight scale), so renormalizing keeps magnitudes bounded
        // without changing any future distribution.
        let new_lse = logsumexp(&self.log_weights);
        for lw in self.log_weights.iter_mut() {
            *lw -= new_lse;
        }
        self.rounds_played += 1;
        if self.log_weights.iter().any(|lw| !lw.is_finite()) {
            return Err(Error::numerical("bandit weights became non-finite"));
        }
        Ok(())
    }
}

/// Switching hardness of a played sequence: one plus the number of indices
/// where consecutive entries differ. An empty sequence has hardness zero.
pub fn hardness(actions: &[usize]) -> usize {
    if actions.is_empty() {
        return 0;
    }
    1 + actions.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Closed-form Exp3.S regret bound
/// `y_b h sqrt(|Q| T ln(|Q| T)) + 2 y_b e sqrt(|Q| T / ln(|Q| T))`.
///
/// Errors when `|Q| T < 2` (the log must be positive).
pub fn exp3s_regret_bound(
    action_count: usize,
    horizon: usize,
    y_b: f64,
    hardness: usize,
) -> Result<f64> {
    if action_count * horizon < 2 {
        return Err(Error::invalid(
            "regret bound needs action_count * horizon >= 2",
        ));
    }
    if !y_b.is_finite() || y_b < 0.0 {
        return Err(Error::invalid(format!(
            "cost ceiling must be finite and nonnegative, got {y_b}"
        )));
    }
    let qt = (action_count * horizon) as f64;
    let log_qt = qt.ln();
    Ok(y_b * hardness as f64 * (qt * log_qt).sqrt()
        + 2.0 * y_b * std::f64::consts::E * (qt / log_qt).sqrt())
}

fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

fn logsumexp2(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Convenience: empirical pull frequencies of a sampled sequence.
pub fn pull_fractions(actions: &[usize], action_count: usize) -> DVector<f64> {
    let mut counts = DVector::zeros(action_count);
    for &a in actions {
        counts[a] += 1.0;
    }
    if !actions.is_empty() {
        counts /= actions.len() as f64;
    }
    counts
}
