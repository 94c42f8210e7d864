use std::io::Write;

use serde::{Deserialize, Serialize};

use super::problem::{finite_or_err, Compiled, HorizonProblem, Penalty};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf, Cholesky, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Projected-gradient stationarity tolerance (∞-norm).
    pub tol_grad: f64,
    /// Maximum admissible constraint violation.
    pub tol_feas: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub rho_init: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    /// Sufficient-decrease constant of the Armijo rule.
    pub armijo: f64,
    /// Record one [`IterationRecord`] per outer iteration.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_grad: 1e-6,
            tol_feas: 1e-6,
            max_inner: 200,
            max_outer: 20,
            rho_init: 10.0,
            rho_growth: 10.0,
            rho_max: 1e9,
            armijo: 1e-4,
            record_trace: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol_grad > 0.0
            && self.tol_feas > 0.0
            && self.max_inner >= 1
            && self.max_outer >= 1
            && self.rho_init > 0.0
            && self.rho_growth > 1.0
            && self.rho_max >= self.rho_init
            && self.armijo > 0.0
            && self.armijo < 0.5;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid solver options: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub outer: usize,
    pub inner_iterations: usize,
    pub objective: f64,
    pub violation: f64,
    pub stationarity: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Decision accelerations, stacked per decision agent.
    pub controls: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    /// Projected-gradient norm of the augmented Lagrangian at exit.
    pub stationarity: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    pub penalty: Penalty,
    pub trace: Vec<IterationRecord>,
}

impl SolveReport {
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,objective,violation")?;
        for r in &self.trace {
            writeln!(w, "{},{:e},{:e}", r.outer, r.objective, r.violation)?;
        }
        Ok(())
    }
}

/// Minimizes the problem from `initial` (clamped into the box).
pub fn solve(problem: &HorizonProblem, initial: &[f64], options: &SolverOptions) -> Result<SolveReport> {
    solve_with_penalty(problem, initial, None, options)
}

/// As [`solve`] with warm-started multipliers.
pub fn solve_with_penalty(
    problem: &HorizonProblem,
    initial: &[f64],
    penalty: Option<Penalty>,
    options: &SolverOptions,
) -> Result<SolveReport> {
    let c = Compiled::new(problem)?;
    c.check_len(initial)?;
    if initial.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial controls must be finite".into()));
    }
    let mut x: Vec<f64> = initial
        .iter()
        .zip(c.lower.iter().zip(&c.upper))
        .map(|(v, (l, u))| v.clamp(*l, *u))
        .collect();
    finite_or_err(c.evaluate(&x, None, None, None))?;

    let mut pen = penalty.unwrap_or_else(|| Penalty::new(problem, options.rho_init));
    if pen.ineq.len() != c.n_ineq() || pen.eq.len() != c.n_eq() {
        return Err(Error::InvalidArgument("multiplier vector does not match constraint count".into()));
    }
    let mut ws = Workspace::new(c.n);
    let mut trace = Vec::new();
    let mut total_inner = 0;
    let mut g = Vec::new();
    let mut hv = Vec::new();
    let mut prev_violation = f64::INFINITY;
    let mut stationarity = f64::INFINITY;
    let mut outer_done = 0;
    let mut accepted_x = x.clone();
    let mut accepted_pen = pen.clone();

    for outer in 0..options.max_outer {
        outer_done = outer + 1;
        let inner = minimize_inner(&c, &mut x, &pen, options, &mut ws)?;
        total_inner += inner.iterations;
        stationarity = inner.stationarity;
        let violation = c.violation(&x);

        if violation > prev_violation + options.tol_feas {
            // Reject the iterate: restart from the last accepted point with a stiffer penalty.
            x.clone_from(&accepted_x);
            pen = accepted_pen.clone();
            if pen.rho >= options.rho_max {
                break;
            }
            pen.rho = (pen.rho * options.rho_growth).min(options.rho_max);
            continue;
        }
        if options.record_trace {
            trace.push(IterationRecord {
                outer,
                inner_iterations: inner.iterations,
                objective: c.evaluate(&x, None, None, None),
                violation,
                stationarity,
                rho: pen.rho,
            });
        }
        accepted_x.clone_from(&x);
        accepted_pen = pen.clone();

        if violation <= options.tol_feas && stationarity <= options.tol_grad {
            break;
        }
        if c.n_ineq() + c.n_eq() == 0 {
            break;
        }
        c.constraint_values(&x, &mut g, &mut hv);
        for (mu, gi) in pen.ineq.iter_mut().zip(&g) {
            *mu = (*mu + pen.rho * gi).max(0.0);
        }
        for (lam, hi) in pen.eq.iter_mut().zip(&hv) {
            *lam += pen.rho * hi;
        }
        if violation > 0.25 * prev_violation.min(1e300) && violation > options.tol_feas {
            pen.rho = (pen.rho * options.rho_growth).min(options.rho_max);
        }
        prev_violation = violation;
    }

    let x = accepted_x;
    let max_violation = c.violation(&x);
    let objective = finite_or_err(c.evaluate(&x, None, None, None))?;
    let mut grad = vec![0.0; c.n];
    c.evaluate(&x, Some(&accepted_pen), Some(&mut grad), None);
    let final_stationarity = projected_gradient_norm(&x, &grad, &c.lower, &c.upper);
    if final_stationarity.is_finite() {
        stationarity = final_stationarity;
    }
    Ok(SolveReport {
        converged: max_violation <= options.tol_feas && stationarity <= options.tol_grad,
        controls: x,
        objective,
        max_violation,
        stationarity,
        iterations: total_inner,
        outer_iterations: outer_done,
        penalty: accepted_pen,
        trace,
    })
}

struct InnerResult {
    iterations: usize,
    stationarity: f64,
}

struct Workspace {
    grad: Vec<f64>,
    hess: Matrix,
    dir: Vec<f64>,
    trial: Vec<f64>,
    free: Vec<usize>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            grad: vec![0.0; n],
            hess: Matrix::zeros(n),
            dir: vec![0.0; n],
            trial: vec![0.0; n],
            free: Vec::with_capacity(n),
        }
    }
}

pub(crate) fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((xi, gi), (l, u))| ((xi - gi).clamp(*l, *u) - xi).abs())
        .fold(0.0, f64::max)
}

/// Two-metric projected Newton on the augmented Lagrangian with box bounds.
fn minimize_inner(
    c: &Compiled<'_>,
    x: &mut [f64],
    pen: &Penalty,
    opts: &SolverOptions,
    ws: &mut Workspace,
) -> Result<InnerResult> {
    let n = c.n;
    let (lo, hi) = (&c.lower, &c.upper);
    let mut stationarity = f64::INFINITY;
    for it in 0..opts.max_inner {
        let f = c.evaluate(x, Some(pen), Some(&mut ws.grad), Some(&mut ws.hess));
        if f.is_nan() {
            return Err(Error::Numeric("objective evaluated to NaN".into()));
        }
        stationarity = projected_gradient_norm(x, &ws.grad, lo, hi);
        if stationarity <= opts.tol_grad {
            return Ok(InnerResult { iterations: it, stationarity });
        }

        // ε-active set: variables at (or within ε of) a bound with the gradient pushing outward.
        let eps = stationarity.min(1e-6);
        ws.free.clear();
        for i in 0..n {
            let at_lo = x[i] <= lo[i] + eps && ws.grad[i] > 0.0;
            let at_hi = x[i] >= hi[i] - eps && ws.grad[i] < 0.0;
            if !(at_lo || at_hi) {
                ws.free.push(i);
            }
        }
        newton_direction(ws, n);

        let accepted = armijo_search(c, x, f, pen, opts, ws, true)
            || {
                // Fall back to steepest descent in the scaled metric.
                for i in 0..n {
                    let d = ws.hess.get(i, i);
                    let scale = if d > 1e-12 { d } else { 1.0 };
                    ws.dir[i] = -ws.grad[i] / scale;
                }
                armijo_search(c, x, f, pen, opts, ws, false)
            };
        if !accepted {
            return Ok(InnerResult { iterations: it + 1, stationarity });
        }
    }
    let f = c.evaluate(x, Some(pen), Some(&mut ws.grad), None);
    if f.is_finite() {
        stationarity = projected_gradient_norm(x, &ws.grad, lo, hi);
    }
    Ok(InnerResult { iterations: opts.max_inner, stationarity })
}

/// Newton step on the free variables with a diagonal shift when the reduced
/// Hessian is not positive definite; scaled gradient on the active ones.
fn newton_direction(ws: &mut Workspace, n: usize) {
    for i in 0..n {
        let d = ws.hess.get(i, i);
        let scale = if d > 1e-12 { d } else { 1.0 };
        ws.dir[i] = -ws.grad[i] / scale;
    }
    if ws.free.is_empty() {
        return;
    }
    let sub = ws.hess.submatrix(&ws.free);
    let mut shift = 0.0;
    let base = (sub.max_abs_diag() * 1e-8).max(1e-10);
    let chol = loop {
        if let Some(ch) = Cholesky::factor_shifted(&sub, shift) {
            break Some(ch);
        }
        shift = if shift == 0.0 { base } else { shift * 10.0 };
        if !shift.is_finite() || shift > 1e20 {
            break None;
        }
    };
    if let Some(ch) = chol {
        let rhs: Vec<f64> = ws.free.iter().map(|&i| -ws.grad[i]).collect();
        let step = ch.solve(&rhs);
        for (k, &i) in ws.free.iter().enumerate() {
            ws.dir[i] = step[k];
        }
    }
}

/// Backtracking along the projection arc `P(x + α d)`. Updates `x` on success.
fn armijo_search(
    c: &Compiled<'_>,
    x: &mut [f64],
    f: f64,
    pen: &Penalty,
    opts: &SolverOptions,
    ws: &mut Workspace,
    newton: bool,
) -> bool {
    let (lo, hi) = (&c.lower, &c.upper);
    let mut alpha = 1.0;
    for _ in 0..40 {
        for i in 0..x.len() {
            ws.trial[i] = (x[i] + alpha * ws.dir[i]).clamp(lo[i], hi[i]);
        }
        let step: Vec<f64> = ws.trial.iter().zip(x.iter()).map(|(t, xi)| t - xi).collect();
        let predicted = dot(&ws.grad, &step);
        if predicted >= 0.0 {
            if norm_inf(&step) == 0.0 {
                return false;
            }
            alpha *= 0.5;
            continue;
        }
        let ft = c.evaluate(&ws.trial, Some(pen), None, None);
        if ft.is_finite() && ft <= f + opts.armijo * predicted {
            x.copy_from_slice(&ws.trial);
            return true;
        }
        // Near a minimizer the decrease drops below the rounding level of f.
        if newton && alpha == 1.0 && ft.is_finite() && -predicted <= 1e-13 * (1.0 + f.abs()) {
            x.copy_from_slice(&ws.trial);
            return true;
        }
        alpha *= 0.5;
    }
    false
}
