//! Seeded episode rollouts and realized quadratic costs.
//!
//! Each simulated round is one episode of `N` steps from `x_0 = 0`. Noise is
//! drawn from the RNG handed in by the caller, which in the online loop is
//! the round's own counter-derived stream (see [`crate::rng`]): traces are
//! exactly reproducible from `(master_seed, round)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::gaussian_vector;

/// A fully recorded episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    /// Simulated round this episode belongs to (1-based; 0 for standalone).
    pub round: usize,
    /// Actuators that were driven (subset or exploration group indices).
    pub actuators: Vec<usize>,
    /// States `x_0 .. x_N`.
    pub states: Vec<DVector<f64>>,
    /// Inputs `u_0 .. u_{N-1}` in the restricted input space.
    pub inputs: Vec<DVector<f64>>,
    /// Process noise `w_0 .. w_{N-1}`.
    pub process_noise: Vec<DVector<f64>>,
    /// Exploration dither `w~_0 .. w~_{N-1}` when the episode used it.
    pub exploration_noise: Option<Vec<DVector<f64>>>,
}

impl EpisodeTrace {
    /// Episode length `N`.
    pub fn stage_count(&self) -> usize {
        self.inputs.len()
    }
}

/// Roll out a gain schedule `u_k = K_k x_k` for one episode.
///
/// `gains` must hold `N` matrices shaped `m_S x n`. The process noise is
/// `N(0, sigma^2 I)` drawn per step from `rng`.
pub fn rollout_gain_policy<R: rand::Rng + ?Sized>(
    a: &DMatrix<f64>,
    b_s: &DMatrix<f64>,
    gains: &[DMatrix<f64>],
    sigma: f64,
    rng: &mut R,
    round: usize,
    actuators: Vec<usize>,
) -> Result<EpisodeTrace> {
    let n = a.nrows();
    let ms = b_s.ncols();
    if !a.is_square() || b_s.nrows() != n {
        return Err(Error::invalid("inconsistent system dimensions"));
    }
    if gains.is_empty() {
        return Err(Error::invalid("rollout needs at least one gain"));
    }
    for (k, g) in gains.iter().enumerate() {
        if g.nrows() != ms || g.ncols() != n {
            return Err(Error::invalid(format!(
                "gain {k} must be {ms}x{n}, got {}x{}",
                g.nrows(),
                g.ncols()
            )));
        }
    }
    let n_steps = gains.len();
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut inputs = Vec::with_capacity(n_steps);
    let mut noise = Vec::with_capacity(n_steps);
    states.push(DVector::zeros(n));
    for k in 0..n_steps {
        let x = &states[k];
        let u = &gains[k] * x;
        let w = gaussian_vector(rng, n, sigma);
        let x_next = a * x + b_s * &u + &w;
        if !linalg::all_finite_vec(&x_next) {
            return Err(Error::numerical(format!(
                "rollout produced non-finite state at step {k}"
            )));
        }
        inputs.push(u);
        noise.push(w);
        states.push(x_next);
    }
    Ok(EpisodeTrace {
        round,
        actuators,
        states,
        inputs,
        process_noise: noise,
        exploration_noise: None,
    })
}

/// Roll out one exploration episode on an actuator group:
/// `u_k = K_G x_k + w~_k` with dither `w~_k ~ N(0, 2 sigma^2 kappa^2 I)`.
///
/// Per step the dither is drawn before the process noise; that fixed order is
/// part of the determinism contract.
#[allow(clippy::too_many_arguments)]
pub fn rollout_exploration<R: rand::Rng + ?Sized>(
    a: &DMatrix<f64>,
    b_g: &DMatrix<f64>,
    gain_g: &DMatrix<f64>,
    sigma: f64,
    kappa: f64,
    n_steps: usize,
    rng: &mut R,
    round: usize,
    actuators: Vec<usize>,
) -> Result<EpisodeTrace> {
    let n = a.nrows();
    let mg = b_g.ncols();
    if !a.is_square() || b_g.nrows() != n {
        return Err(Error::invalid("inconsistent system dimensions"));
    }
    if gain_g.nrows() != mg || gain_g.ncols() != n {
        return Err(Error::invalid("group gain shape must match the group input width"));
    }
    if n_steps == 0 {
        return Err(Error::invalid("episode length must be at least 1"));
    }
    if kappa < 1.0 {
        return Err(Error::invalid("kappa must be at least 1"));
    }
    let dither_std = sigma * kappa * std::f64::consts::SQRT_2;
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut inputs = Vec::with_capacity(n_steps);
    let mut noise = Vec::with_capacity(n_steps);
    let mut dither = Vec::with_capacity(n_steps);
    states.push(DVector::zeros(n));
    for k in 0..n_steps {
        let x = &states[k];
        let wt = gaussian_vector(rng, mg, dither_std);
        let u = gain_g * x + &wt;
        let w = gaussian_vector(rng, n, sigma);
        let x_next = a * x + b_g * &u + &w;
        if !linalg::all_finite_vec(&x_next) {
            return Err(Error::numerical(format!(
                "exploration rollout produced non-finite state at step {k}"
            )));
        }
        inputs.push(u);
        dither.push(wt);
        noise.push(w);
        states.push(x_next);
    }
    Ok(EpisodeTrace {
        round,
        actuators,
        states,
        inputs,
        process_noise: noise,
        exploration_noise: Some(dither),
    })
}

/// Realized episode cost
/// `sum_k (x_k^T Q x_k + u_k^T R_S u_k) + x_N^T Q_f x_N`.
pub fn realized_cost(
    trace: &EpisodeTrace,
    q: &DMatrix<f64>,
    qf: &DMatrix<f64>,
    r_s: &DMatrix<f64>,
) -> Result<f64> {
    let n_steps = trace.stage_count();
    if trace.states.len() != n_steps + 1 || trace.process_noise.len() != n_steps {
        return Err(Error::invalid("trace is internally inconsistent"));
    }
    let n = trace.states[0].nrows();
    if q.nrows() != n || qf.nrows() != n {
        return Err(Error::invalid("state cost dimensions must match the trace"));
    }
    let ms = trace.inputs.first().map_or(0, |u| u.nrows());
    if r_s.nrows() != ms || !r_s.is_square() {
        return Err(Error::invalid("input cost dimension must match the trace inputs"));
    }
    let mut cost = 0.0;
    for k in 0..n_steps {
        let x = &trace.states[k];
        let u = &trace.inputs[k];
        cost += (x.transpose() * q * x)[(0, 0)];
        cost += (u.transpose() * r_s * u)[(0, 0)];
    }
    let xn = &trace.states[n_steps];
    cost += (xn.transpose() * qf * xn)[(0, 0)];
    Ok(cost)
}
