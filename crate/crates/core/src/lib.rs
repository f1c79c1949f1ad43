//! Simulation and verification toolkit for online actuator selection in
//! finite-horizon discrete-time LQR under unknown dynamics.
//!
//! The library covers the full pipeline:
//!
//! * [`model`] — system instances `x_{k+1} = A x_k + B_S u_k + w_k`, actuator
//!   subsets with column-block structure, controllability margins, and
//!   stabilizing gains for actuator groups;
//! * [`lqr`] — finite-horizon Riccati recursions, expected-cost evaluation of
//!   arbitrary gain schedules, and the exact excess-cost identity for
//!   mismatched gains;
//! * [`sim`] — seeded episode rollouts (both gain-policy and
//!   exploration-with-dither) and realized quadratic costs;
//! * [`sysid`] — regularized least-squares identification of `(A, B)` from
//!   exploration traces, streaming or batch;
//! * [`bandit`] — Exp3.S adversarial bandit over actuator subsets
//!   (Auer, Cesa-Bianchi, Freund, Schapire 2002);
//! * [`online`] — the epoch-scheduled explore/select/control loop combining
//!   all of the above, plus regret accounting against the offline oracle;
//! * [`bounds`] — numeric estimation of the constants used by the
//!   perturbation analysis and verifiers that check each analytic inequality
//!   on sampled instances.
//!
//! Everything is deterministic given explicit seeds: every simulated round
//! draws from its own counter-derived RNG stream (see [`rng`]).

pub mod bandit;
pub mod bounds;
pub mod cli;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lqr;
pub mod model;
pub mod online;
pub mod rng;
pub mod sim;
pub mod sysid;

pub use error::{Error, Result};
