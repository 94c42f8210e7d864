use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::objectives::{IndividualWeights, SharedWeight};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AgentRole {
    /// Accelerations are decision variables, optionally boxed.
    Decision { bounds: Option<(f64, f64)> },
    /// Exogenous accelerations, one per step.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub initial: VehicleState,
    /// Individual cost weights; `None` drops the agent's individual term.
    pub weights: Option<IndividualWeights>,
    pub role: AgentRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Constraint {
    /// `v_{agent,k+1} ≤ limit` for every step.
    SpeedMax { agent: usize, limit: f64 },
    /// `v_{agent,k+1} ≥ limit` for every step.
    SpeedMin { agent: usize, limit: f64 },
    /// `√(p₁,k+1² + p₂,k+1²) ≥ radius` for every step.
    MinSeparation { radius: f64 },
    /// `v_{agent,step+1} = value`.
    SpeedEquals { agent: usize, step: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonProblem {
    pub horizon: usize,
    pub dt: f64,
    /// Speed reference of the speed-deviation term.
    pub v_ref: f64,
    /// One or two agents; index 0 is the CAV when two are present.
    pub agents: Vec<AgentSpec>,
    pub shared: Option<SharedWeight>,
    pub constraints: Vec<Constraint>,
}

impl HorizonProblem {
    pub fn decision_count(&self) -> usize {
        self.agents
            .iter()
            .filter(|a| matches!(a.role, AgentRole::Decision { .. }))
            .count()
            * self.horizon
    }

    /// Number of scalar inequality and equality constraint instances.
    pub fn constraint_counts(&self) -> (usize, usize) {
        let mut ineq = 0;
        let mut eq = 0;
        for c in &self.constraints {
            match c {
                Constraint::SpeedEquals { .. } => eq += 1,
                _ => ineq += self.horizon,
            }
        }
        (ineq, eq)
    }

    /// Box bounds of the decision vector (infinite where unbounded).
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for agent in &self.agents {
            if let AgentRole::Decision { bounds } = agent.role {
                let (l, u) = bounds.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
                lo.extend(std::iter::repeat_n(l, self.horizon));
                hi.extend(std::iter::repeat_n(u, self.horizon));
            }
        }
        (lo, hi)
    }

    /// Rolls out all agents; returns per-agent `(accel, next states)` for each step.
    pub fn rollout(&self, controls: &[f64]) -> Result<Vec<(Vec<f64>, Vec<VehicleState>)>> {
        let c = Compiled::new(self)?;
        c.check_len(controls)?;
        let mut out = Vec::with_capacity(self.agents.len());
        for i in 0..self.agents.len() {
            let mut acc = vec![0.0; self.horizon];
            let mut states = vec![VehicleState::new(0.0, 0.0); self.horizon];
            c.roll_agent(i, controls, &mut acc, &mut states);
            out.push((acc, states));
        }
        Ok(out)
    }
}

/// Augmented Lagrangian multipliers and penalty parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub ineq: Vec<f64>,
    pub eq: Vec<f64>,
    pub rho: f64,
}

impl Penalty {
    pub fn new(problem: &HorizonProblem, rho: f64) -> Self {
        let (ni, ne) = problem.constraint_counts();
        Self { ineq: vec![0.0; ni], eq: vec![0.0; ne], rho }
    }
}

#[derive(Debug, Clone, Copy)]
enum Ineq {
    SpeedMax { agent: usize, k: usize, limit: f64 },
    SpeedMin { agent: usize, k: usize, limit: f64 },
    Separation { k: usize, radius: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Eqc {
    agent: usize,
    k: usize,
    value: f64,
}

pub(crate) fn finite_or_err(f: f64) -> Result<f64> {
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::Numeric(format!("objective is not finite ({f}); singular log argument along the rollout")))
    }
}

/// Problem with precomputed sensitivities of speeds and positions.
pub(crate) struct Compiled<'a> {
    pub(crate) problem: &'a HorizonProblem,
    pub(crate) n: usize,
    offsets: Vec<Option<usize>>,
    /// `∂v_{i,k+1}/∂x`, flattened as `[agent][k][n]`.
    gv: Vec<f64>,
    /// `∂p_{i,k+1}/∂x`, same layout.
    gp: Vec<f64>,
    pub(crate) lower: Vec<f64>,
    pub(crate) upper: Vec<f64>,
    ineq: Vec<Ineq>,
    eq: Vec<Eqc>,
}

impl<'a> Compiled<'a> {
    pub(crate) fn new(problem: &'a HorizonProblem) -> Result<Self> {
        let h = problem.horizon;
        if h == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if h > MAX_H {
            return Err(Error::InvalidArgument(format!("horizon {h} exceeds the supported maximum {MAX_H}")));
        }
        if !(problem.dt > 0.0) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        if problem.agents.is_empty() || problem.agents.len() > 2 {
            return Err(Error::InvalidArgument("problem needs one or two agents".into()));
        }
        let two = problem.agents.len() == 2;
        if problem.shared.is_some() && !two {
            return Err(Error::InvalidArgument("shared term needs two agents".into()));
        }
        let mut offsets = Vec::new();
        let mut n = 0;
        for a in &problem.agents {
            if !a.initial.is_finite() {
                return Err(Error::InvalidArgument("initial state must be finite".into()));
            }
            match &a.role {
                AgentRole::Decision { bounds } => {
                    if let Some((l, u)) = bounds {
                        if !(l <= u) {
                            return Err(Error::InvalidArgument(format!("bounds lower {l} exceeds upper {u}")));
                        }
                    }
                    offsets.push(Some(n));
                    n += h;
                }
                AgentRole::Fixed(u) => {
                    if u.len() != h {
                        return Err(Error::InvalidArgument(format!(
                            "fixed control sequence has length {}, horizon is {h}",
                            u.len()
                        )));
                    }
                    offsets.push(None);
                }
            }
        }
        let na = problem.agents.len();
        let dt = problem.dt;
        let mut gv = vec![0.0; na * h * n];
        let mut gp = vec![0.0; na * h * n];
        for (i, off) in offsets.iter().enumerate() {
            if let Some(o) = off {
                for k in 0..h {
                    let base = (i * h + k) * n;
                    for j in 0..=k {
                        gv[base + o + j] = dt;
                        gp[base + o + j] = dt * dt * ((k - j) as f64 + 0.5);
                    }
                }
            }
        }
        let mut ineq = Vec::new();
        let mut eq = Vec::new();
        for c in &problem.constraints {
            match *c {
                Constraint::SpeedMax { agent, limit } => {
                    check_agent(agent, na)?;
                    ineq.extend((0..h).map(|k| Ineq::SpeedMax { agent, k, limit }));
                }
                Constraint::SpeedMin { agent, limit } => {
                    check_agent(agent, na)?;
                    ineq.extend((0..h).map(|k| Ineq::SpeedMin { agent, k, limit }));
                }
                Constraint::MinSeparation { radius } => {
                    if !two {
                        return Err(Error::InvalidArgument("separation constraint needs two agents".into()));
                    }
                    ineq.extend((0..h).map(|k| Ineq::Separation { k, radius }));
                }
                Constraint::SpeedEquals { agent, step, value } => {
                    check_agent(agent, na)?;
                    if step >= h {
                        return Err(Error::InvalidArgument(format!("equality step {step} beyond horizon")));
                    }
                    eq.push(Eqc { agent, k: step, value });
                }
            }
        }
        let (lower, upper) = problem.bounds();
        Ok(Self { problem, n, offsets, gv, gp, lower, upper, ineq, eq })
    }

    pub(crate) fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.n {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("expected {} controls, got {}", self.n, x.len())))
        }
    }

    pub(crate) fn n_ineq(&self) -> usize {
        self.ineq.len()
    }

    pub(crate) fn n_eq(&self) -> usize {
        self.eq.len()
    }

    #[inline]
    fn gv_row(&self, agent: usize, k: usize) -> &[f64] {
        let b = (agent * self.problem.horizon + k) * self.n;
        &self.gv[b..b + self.n]
    }

    #[inline]
    fn gp_row(&self, agent: usize, k: usize) -> &[f64] {
        let b = (agent * self.problem.horizon + k) * self.n;
        &self.gp[b..b + self.n]
    }

    pub(crate) fn roll_agent(&self, i: usize, x: &[f64], acc: &mut [f64], next: &mut [VehicleState]) {
        let agent = &self.problem.agents[i];
        let dt = self.problem.dt;
        let mut s = agent.initial;
        for k in 0..self.problem.horizon {
            let a = match (&agent.role, self.offsets[i]) {
                (AgentRole::Fixed(u), _) => u[k],
                (_, Some(o)) => x[o + k],
                _ => unreachable!(),
            };
            acc[k] = a;
            s = crate::dynamics::step_unchecked(s, a, dt);
            next[k] = s;
        }
    }

    fn rollout_into(&self, x: &[f64], acc: &mut [[f64; MAX_H]; 2], next: &mut [[VehicleState; MAX_H]; 2]) {
        let h = self.problem.horizon;
        for i in 0..self.problem.agents.len() {
            self.roll_agent(i, x, &mut acc[i][..h], &mut next[i][..h]);
        }
    }

    /// Constraint values `g` (≤ 0 feasible) and `h` (= 0 feasible).
    pub(crate) fn constraint_values(&self, x: &[f64], g: &mut Vec<f64>, hv: &mut Vec<f64>) {
        let (mut acc, mut next) = scratch();
        self.rollout_into(x, &mut acc, &mut next);
        g.clear();
        hv.clear();
        for c in &self.ineq {
            g.push(match *c {
                Ineq::SpeedMax { agent, k, limit } => next[agent][k].speed - limit,
                Ineq::SpeedMin { agent, k, limit } => limit - next[agent][k].speed,
                Ineq::Separation { k, radius } => radius - next[0][k].position.hypot(next[1][k].position),
            });
        }
        for e in &self.eq {
            hv.push(next[e.agent][e.k].speed - e.value);
        }
    }

    pub(crate) fn violation(&self, x: &[f64]) -> f64 {
        let mut g = Vec::new();
        let mut h = Vec::new();
        self.constraint_values(x, &mut g, &mut h);
        g.iter().map(|v| v.max(0.0)).chain(h.iter().map(|v| v.abs())).fold(0.0, f64::max)
    }

    /// Value of the objective plus (optionally) augmented Lagrangian terms.
    ///
    /// Returns a non-finite value when the log argument is not positive.
    /// Gradient and Hessian buffers, when given, are overwritten.
    pub(crate) fn evaluate(
        &self,
        x: &[f64],
        penalty: Option<&Penalty>,
        mut grad: Option<&mut [f64]>,
        mut hess: Option<&mut Matrix>,
    ) -> f64 {
        let p = self.problem;
        let h = p.horizon;
        let (mut acc, mut next) = scratch();
        self.rollout_into(x, &mut acc, &mut next);
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        if let Some(hm) = hess.as_deref_mut() {
            hm.fill(0.0);
        }
        let mut f = 0.0;

        for k in 0..h {
            for (i, agent) in p.agents.iter().enumerate() {
                let Some(w) = agent.weights else { continue };
                let a = acc[i][k];
                let dv = next[i][k].speed - p.v_ref;
                f += w.w_accel * a * a + w.w_speed_dev * dv * dv;
                let gvr = self.gv_row(i, k);
                if let Some(g) = grad.as_deref_mut() {
                    if let Some(o) = self.offsets[i] {
                        g[o + k] += 2.0 * w.w_accel * a;
                    }
                    axpy(2.0 * w.w_speed_dev * dv, gvr, g);
                }
                if let Some(hm) = hess.as_deref_mut() {
                    if let Some(o) = self.offsets[i] {
                        hm.add(o + k, o + k, 2.0 * w.w_accel);
                    }
                    hm.add_outer(2.0 * w.w_speed_dev, gvr);
                }
            }

            if let Some(sw) = p.shared {
                let q0 = next[0][k].position;
                let q1 = next[1][k].position;
                let s = q0 * q0 + q1 * q1;
                let arg = sw.gamma * s;
                if !(arg > 0.0) {
                    return f64::INFINITY;
                }
                let w = sw.w_shared;
                f -= w * arg.ln();
                // φ(q) = −w ln(γ|q|²): ∇φ = −2w q/s, ∇²φ = −2w I/s + 4w q qᵀ/s²
                let d0 = -2.0 * w * q0 / s;
                let d1 = -2.0 * w * q1 / s;
                let h00 = -2.0 * w / s + 4.0 * w * q0 * q0 / (s * s);
                let h11 = -2.0 * w / s + 4.0 * w * q1 * q1 / (s * s);
                let h01 = 4.0 * w * q0 * q1 / (s * s);
                self.add_pair_terms(k, [d0, d1], [[h00, h01], [h01, h11]], grad.as_deref_mut(), hess.as_deref_mut());
            }
        }

        if let Some(pen) = penalty {
            let rho = pen.rho;
            for (ci, c) in self.ineq.iter().enumerate() {
                let mu = pen.ineq[ci];
                match *c {
                    Ineq::SpeedMax { agent, k, limit } | Ineq::SpeedMin { agent, k, limit } => {
                        let sign = if matches!(c, Ineq::SpeedMax { .. }) { 1.0 } else { -1.0 };
                        let gval = sign * (next[agent][k].speed - limit);
                        let t = mu + rho * gval;
                        f += (t.max(0.0).powi(2) - mu * mu) / (2.0 * rho);
                        if t > 0.0 {
                            let gvr = self.gv_row(agent, k);
                            if let Some(g) = grad.as_deref_mut() {
                                axpy(t * sign, gvr, g);
                            }
                            if let Some(hm) = hess.as_deref_mut() {
                                hm.add_outer(rho, gvr);
                            }
                        }
                    }
                    Ineq::Separation { k, radius } => {
                        let q0 = next[0][k].position;
                        let q1 = next[1][k].position;
                        let d = q0.hypot(q1);
                        let gval = radius - d;
                        let t = mu + rho * gval;
                        f += (t.max(0.0).powi(2) - mu * mu) / (2.0 * rho);
                        if t > 0.0 {
                            if !(d > 0.0) {
                                return f64::INFINITY;
                            }
                            // g(q) = r − |q|: ∇g = −q/d, ∇²g = −I/d + q qᵀ/d³
                            let dg = [-q0 / d, -q1 / d];
                            let d3 = d * d * d;
                            let hg = [
                                [-1.0 / d + q0 * q0 / d3, q0 * q1 / d3],
                                [q0 * q1 / d3, -1.0 / d + q1 * q1 / d3],
                            ];
                            // ψ'' ∇g∇gᵀ + ψ' ∇²g in q-space
                            let hq = [
                                [rho * dg[0] * dg[0] + t * hg[0][0], rho * dg[0] * dg[1] + t * hg[0][1]],
                                [rho * dg[1] * dg[0] + t * hg[1][0], rho * dg[1] * dg[1] + t * hg[1][1]],
                            ];
                            self.add_pair_terms(
                                k,
                                [t * dg[0], t * dg[1]],
                                hq,
                                grad.as_deref_mut(),
                                hess.as_deref_mut(),
                            );
                        }
                    }
                }
            }
            for (ei, e) in self.eq.iter().enumerate() {
                let lam = pen.eq[ei];
                let hval = next[e.agent][e.k].speed - e.value;
                f += lam * hval + 0.5 * rho * hval * hval;
                let gvr = self.gv_row(e.agent, e.k);
                if let Some(g) = grad.as_deref_mut() {
                    axpy(lam + rho * hval, gvr, g);
                }
                if let Some(hm) = hess.as_deref_mut() {
                    hm.add_outer(rho, gvr);
                }
            }
        }
        f
    }

    /// Chain rule for a term depending on `(p₀,k+1, p₁,k+1)` with q-space
    /// gradient `dq` and Hessian `hq`.
    fn add_pair_terms(
        &self,
        k: usize,
        dq: [f64; 2],
        hq: [[f64; 2]; 2],
        grad: Option<&mut [f64]>,
        hess: Option<&mut Matrix>,
    ) {
        let r0 = self.gp_row(0, k);
        let r1 = self.gp_row(1, k);
        let dec0 = self.offsets[0].is_some();
        let dec1 = self.offsets[1].is_some();
        if let Some(g) = grad {
            if dec0 {
                axpy(dq[0], r0, g);
            }
            if dec1 {
                axpy(dq[1], r1, g);
            }
        }
        if let Some(hm) = hess {
            if dec0 {
                hm.add_outer(hq[0][0], r0);
            }
            if dec1 {
                hm.add_outer(hq[1][1], r1);
            }
            if dec0 && dec1 {
                hm.add_sym_outer(hq[0][1], r0, r1);
            }
        }
    }
}

fn check_agent(agent: usize, n: usize) -> Result<()> {
    if agent < n {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("constraint references agent {agent}, problem has {n}")))
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    if a == 0.0 {
        return;
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Largest horizon supported by the stack scratch buffers.
pub const MAX_H: usize = 64;

fn scratch() -> ([[f64; MAX_H]; 2], [[VehicleState; MAX_H]; 2]) {
    ([[0.0; MAX_H]; 2], [[VehicleState::new(0.0, 0.0); MAX_H]; 2])
}
