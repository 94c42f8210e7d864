//! Receding-horizon potential-game controller for the CAV.
//!
//! Each step minimizes the horizon sum of the potential `l₁ + l₂ + l₁₂`
//! jointly over both vehicles' accelerations. Bounds and the separation
//! constraint apply to the CAV only; the HDV's variables are unconstrained.
//! Only the CAV's first move is applied.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, JointState, ScenarioConfig, VehicleState};
use crate::error::{Error, Result};
use crate::objectives::WeightTuple;
use crate::trajopt::{self, AgentRole, AgentSpec, Constraint, HorizonProblem, SolveReport, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub solver: SolverOptions,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self { horizon: 10, solver: SolverOptions::default() }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.horizon > trajopt_max_horizon() {
            return Err(Error::Config(format!("mpc.horizon must be in 1..={}", trajopt_max_horizon())));
        }
        self.solver.validate()
    }
}

fn trajopt_max_horizon() -> usize {
    crate::trajopt::MAX_HORIZON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcPlan {
    pub cav_controls: Vec<f64>,
    pub hdv_controls: Vec<f64>,
    /// Predicted states after each step of the horizon.
    pub cav_states: Vec<VehicleState>,
    pub hdv_states: Vec<VehicleState>,
    /// Horizon sum of the potential.
    pub objective: f64,
    pub max_violation: f64,
    /// `false` when the solver did not certify the plan.
    pub converged: bool,
    pub iterations: usize,
}

impl MpcPlan {
    pub fn first_cav_control(&self) -> ControlInput {
        ControlInput::new(self.cav_controls[0])
    }

    /// Stacked `[cav…, hdv…]` controls shifted one step, last step duplicated.
    pub fn shifted_controls(&self) -> Vec<f64> {
        let mut out = shift(&self.cav_controls);
        out.extend(shift(&self.hdv_controls));
        out
    }
}

pub(crate) fn shift(u: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = u.iter().skip(1).copied().collect();
    v.push(*u.last().unwrap_or(&0.0));
    v
}

/// The joint horizon problem solved at each step.
pub fn build_problem(joint: &JointState, weights: &WeightTuple, scenario: &ScenarioConfig, horizon: usize) -> HorizonProblem {
    HorizonProblem {
        horizon,
        dt: scenario.dt,
        v_ref: scenario.v_max,
        agents: vec![
            AgentSpec {
                initial: joint.cav,
                weights: Some(weights.cav),
                role: AgentRole::Decision { bounds: Some((scenario.u_min, scenario.u_max)) },
            },
            AgentSpec { initial: joint.hdv, weights: Some(weights.hdv), role: AgentRole::Decision { bounds: None } },
        ],
        shared: Some(weights.shared),
        constraints: vec![
            Constraint::SpeedMax { agent: 0, limit: scenario.v_max },
            Constraint::SpeedMin { agent: 0, limit: scenario.v_min },
            Constraint::MinSeparation { radius: scenario.safety_radius },
        ],
    }
}

/// Solves the potential-game MPC problem from `joint`.
///
/// `warm_start` is the stacked `[cav…, hdv…]` control guess; zeros otherwise.
pub fn plan(
    joint: &JointState,
    weights: &WeightTuple,
    scenario: &ScenarioConfig,
    config: &MpcConfig,
    warm_start: Option<&[f64]>,
) -> Result<MpcPlan> {
    if !joint.cav.is_finite() || !joint.hdv.is_finite() {
        return Err(Error::InvalidArgument("joint state must be finite".into()));
    }
    if !(joint.distance() > 0.0) {
        return Err(Error::SingularConfiguration);
    }
    weights.validate()?;
    let h = config.horizon;
    let problem = build_problem(joint, weights, scenario, h);
    let init = match warm_start {
        Some(w) if w.len() == 2 * h => w.to_vec(),
        Some(w) => {
            return Err(Error::InvalidArgument(format!("warm start has length {}, expected {}", w.len(), 2 * h)));
        }
        None => vec![0.0; 2 * h],
    };
    let report = trajopt::solve(&problem, &init, &config.solver)?;
    plan_from_report(&problem, report)
}

fn plan_from_report(problem: &HorizonProblem, report: SolveReport) -> Result<MpcPlan> {
    let h = problem.horizon;
    let mut roll = problem.rollout(&report.controls)?;
    let (hdv_controls, hdv_states) = roll.pop().expect("two agents");
    let (cav_controls, cav_states) = roll.pop().expect("two agents");
    debug_assert_eq!(cav_controls.len(), h);
    Ok(MpcPlan {
        cav_controls,
        hdv_controls,
        cav_states,
        hdv_states,
        objective: report.objective,
        max_violation: report.max_violation,
        converged: report.converged,
        iterations: report.iterations,
    })
}

/// Receding-horizon wrapper that carries the warm start between steps.
#[derive(Debug, Clone)]
pub struct MpcController {
    scenario: ScenarioConfig,
    config: MpcConfig,
    weights: WeightTuple,
    warm_start: Option<Vec<f64>>,
    last_plan: Option<MpcPlan>,
    degraded_steps: usize,
}

/// Outcome of one controller step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    pub input: ControlInput,
    /// `true` when the plan failed and the braking fallback was applied.
    pub degraded: bool,
    pub plan: Option<MpcPlan>,
}

impl MpcController {
    pub fn new(scenario: ScenarioConfig, config: MpcConfig, weights: WeightTuple) -> Self {
        Self { scenario, config, weights, warm_start: None, last_plan: None, degraded_steps: 0 }
    }

    pub fn weights(&self) -> &WeightTuple {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: WeightTuple) {
        self.weights = weights;
    }

    pub fn last_plan(&self) -> Option<&MpcPlan> {
        self.last_plan.as_ref()
    }

    pub fn degraded_steps(&self) -> usize {
        self.degraded_steps
    }

    pub fn reset(&mut self) {
        self.warm_start = None;
        self.last_plan = None;
    }

    /// Maximal braking `u_min`, limited so that the speed does not drop below `v_min`.
    pub fn fallback(&self, observed: &JointState) -> f64 {
        let sc = &self.scenario;
        sc.u_min.max(((sc.v_min - observed.cav.speed) / sc.dt).min(0.0))
    }

    /// Plans from `observed` and returns the CAV move to apply.
    ///
    /// A failed or uncertified plan falls back to [`Self::fallback`].
    pub fn step(&mut self, observed: &JointState) -> ControlStep {
        let result = plan(observed, &self.weights, &self.scenario, &self.config, self.warm_start.as_deref());
        match result {
            Ok(p) if p.converged => {
                self.warm_start = Some(p.shifted_controls());
                self.last_plan = Some(p.clone());
                ControlStep { input: p.first_cav_control(), degraded: false, plan: Some(p) }
            }
            other => {
                self.degraded_steps += 1;
                let plan = other.ok();
                if let Some(p) = &plan {
                    log::debug!("degraded MPC plan: violation {:e}", p.max_violation);
                    self.warm_start = Some(p.shifted_controls());
                } else {
                    self.warm_start = None;
                }
                self.last_plan = plan.clone();
                ControlStep { input: ControlInput::new(self.fallback(observed)), degraded: true, plan }
            }
        }
    }
}

/// Which vehicle re-optimizes in [`best_response`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Player {
    Cav,
    Hdv,
}

/// One player's optimal controls against a frozen plan of the other.
///
/// Minimizes that player's own horizon cost `Σ lᵢ + l₁₂`. The CAV keeps its
/// bounds and speed limits; `keep_separation` additionally imposes the
/// separation constraint on the responding player.
#[allow(clippy::too_many_arguments)]
pub fn best_response(
    joint: &JointState,
    player: Player,
    weights: &WeightTuple,
    other_controls: &[f64],
    scenario: &ScenarioConfig,
    keep_separation: bool,
    initial: &[f64],
    solver: &SolverOptions,
) -> Result<SolveReport> {
    let h = other_controls.len();
    let fixed = |state| AgentSpec { initial: state, weights: None, role: AgentRole::Fixed(other_controls.to_vec()) };
    let mut constraints = Vec::new();
    let (cav, hdv) = match player {
        Player::Cav => {
            constraints.push(Constraint::SpeedMax { agent: 0, limit: scenario.v_max });
            constraints.push(Constraint::SpeedMin { agent: 0, limit: scenario.v_min });
            let cav = AgentSpec {
                initial: joint.cav,
                weights: Some(weights.cav),
                role: AgentRole::Decision { bounds: Some((scenario.u_min, scenario.u_max)) },
            };
            (cav, fixed(joint.hdv))
        }
        Player::Hdv => {
            let hdv =
                AgentSpec { initial: joint.hdv, weights: Some(weights.hdv), role: AgentRole::Decision { bounds: None } };
            (fixed(joint.cav), hdv)
        }
    };
    if keep_separation {
        constraints.push(Constraint::MinSeparation { radius: scenario.safety_radius });
    }
    let problem = HorizonProblem {
        horizon: h,
        dt: scenario.dt,
        v_ref: scenario.v_max,
        agents: vec![cav, hdv],
        shared: Some(weights.shared),
        constraints,
    };
    trajopt::solve(&problem, initial, solver)
}
