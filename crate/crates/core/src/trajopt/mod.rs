//! Finite-horizon trajectory optimizer for one or two double-integrator
//! vehicles.
//!
//! Inequality and equality constraints are handled by an augmented
//! Lagrangian outer loop; the acceleration box is handled directly by a
//! two-metric projected Newton inner loop with Armijo backtracking along the
//! projection arc. All derivatives are analytic: every quantity entering the
//! objective is an affine function of the stacked accelerations.

mod problem;
mod solver;

pub use problem::{AgentRole, AgentSpec, Constraint, HorizonProblem, Penalty};
pub use solver::{solve, solve_with_penalty, IterationRecord, SolveReport, SolverOptions};

/// Largest supported horizon.
pub const MAX_HORIZON: usize = problem::MAX_H;

use crate::error::Result;

/// Analytic gradient of the augmented Lagrangian at `controls`.
///
/// With `penalty = None` this is the gradient of the plain objective.
pub fn gradient(problem: &HorizonProblem, controls: &[f64], penalty: Option<&Penalty>) -> Result<Vec<f64>> {
    let compiled = problem::Compiled::new(problem)?;
    compiled.check_len(controls)?;
    let mut g = vec![0.0; compiled.n];
    let f = compiled.evaluate(controls, penalty, Some(&mut g), None);
    problem::finite_or_err(f)?;
    Ok(g)
}

/// Objective value (no penalty terms) at `controls`.
pub fn objective(problem: &HorizonProblem, controls: &[f64]) -> Result<f64> {
    let compiled = problem::Compiled::new(problem)?;
    compiled.check_len(controls)?;
    problem::finite_or_err(compiled.evaluate(controls, None, None, None))
}

/// Augmented Lagrangian value at `controls`.
pub fn augmented_objective(problem: &HorizonProblem, controls: &[f64], penalty: &Penalty) -> Result<f64> {
    let compiled = problem::Compiled::new(problem)?;
    compiled.check_len(controls)?;
    problem::finite_or_err(compiled.evaluate(controls, Some(penalty), None, None))
}

/// Largest constraint violation at `controls` (0 when feasible).
pub fn max_violation(problem: &HorizonProblem, controls: &[f64]) -> Result<f64> {
    let compiled = problem::Compiled::new(problem)?;
    compiled.check_len(controls)?;
    Ok(compiled.violation(controls))
}
