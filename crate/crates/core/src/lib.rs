//! Game-theoretic model predictive control for a connected automated vehicle
//! (CAV) crossing an unsignalized intersection with a human-driven vehicle
//! (HDV), with online inverse reinforcement learning of the HDV's objective
//! weights and an offline Bayesian-optimized adaptation map for the CAV's own
//! weights.
//!
//! Module map:
//!
//! * [`dynamics`]: double-integrator kinematics and scenario geometry.
//! * [`objectives`]: feature costs and the potential function.
//! * [`trajopt`]: augmented-Lagrangian / projected-Newton horizon solver.
//! * [`mpc`]: receding-horizon potential-game controller.
//! * [`irl`]: moving-horizon maximum-entropy IRL.
//! * [`gp`] and [`bayesopt`]: surrogate model and expected-improvement loop.
//! * [`evaluation`]: closed-loop simulation, true cost, Monte Carlo.
//! * [`strategy`]: offline grid sweep and bicubic lookup.

pub mod bayesopt;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod gp;
pub mod irl;
pub mod linalg;
pub mod mpc;
pub mod objectives;
pub mod rng;
pub mod strategy;
pub mod trajopt;

pub use error::{Error, Result};
