//! Closed-loop simulation of the CAV (MPC) against a simulated HDV, the true
//! cost of a run, and its Monte Carlo expectation.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{crossing_time, step_unchecked, ControlInput, JointState, ScenarioConfig, VehicleState};
use crate::error::{Error, Result};
use crate::irl::{IrlConfig, OnlineIrl, ThetaEstimate, TrajectorySegment};
use crate::mpc::{self, MpcConfig, MpcController, Player};
use crate::objectives::{IndividualWeights, SharedWeight, WeightTuple};
use crate::rng::stream_rng;
use crate::trajopt::SolverOptions;

/// Fuel-rate polynomial coefficients (mL/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuelCoefficients {
    /// `b₀..b₃` of the cruise term `f_c(v)`.
    pub b: [f64; 4],
    /// `c₀..c₂` of the acceleration term `f_a(v, u)`.
    pub c: [f64; 3],
    pub provenance: String,
}

impl Default for FuelCoefficients {
    fn default() -> Self {
        Self {
            b: [0.1569, 2.450e-2, -7.415e-4, 5.975e-5],
            c: [0.07224, 9.681e-2, 1.075e-3],
            provenance: "Kamal, Mukai, Murata, Kawabe (2013), IEEE T-ITS 14(2): polynomial fuel model, mL/s, v in m/s, u in m/s^2"
                .into(),
        }
    }
}

impl FuelCoefficients {
    pub fn validate(&self) -> Result<()> {
        if self.b.iter().chain(&self.c).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("fuel coefficients must be finite".into()))
        }
    }

    /// Instantaneous fuel rate `f_c(v) + max(u, 0)·(c₀ + c₁v + c₂v²)`.
    pub fn rate(&self, v: f64, u: f64) -> f64 {
        let [b0, b1, b2, b3] = self.b;
        let [c0, c1, c2] = self.c;
        let cruise = b0 + v * (b1 + v * (b2 + v * b3));
        cruise + u.max(0.0) * (c0 + v * (c1 + v * c2))
    }
}

/// Weights of the true cost `α·t + β·E + λ·𝕀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueCostParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Safety radius r (m) of the indicator.
    pub safety_radius: f64,
    /// Steepness ξ of the sigmoid relaxation.
    pub sigmoid_scale: f64,
}

impl Default for TrueCostParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, lambda: 1e3, safety_radius: 10.0, sigmoid_scale: 10.0 }
    }
}

impl TrueCostParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.alpha, self.beta, self.lambda].iter().all(|v| *v >= 0.0 && v.is_finite())
            && self.safety_radius > 0.0
            && self.sigmoid_scale > 0.0
            && self.sigmoid_scale.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid true-cost parameters: {self:?}")))
        }
    }
}

/// Uniform prior over initial positions and speeds, shared by both vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPrior {
    pub position: (f64, f64),
    pub speed: (f64, f64),
}

impl Default for InitialPrior {
    fn default() -> Self {
        Self { position: (-60.0, -30.0), speed: (6.0, 10.0) }
    }
}

impl InitialPrior {
    pub fn validate(&self) -> Result<()> {
        let ok = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a < b;
        if ok(self.position) && ok(self.speed) {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid initial-state prior: {self:?}")))
        }
    }

    /// Draws both vehicles independently until their distance exceeds `radius`.
    pub fn sample(&self, rng: &mut ChaCha8Rng, radius: f64) -> JointState {
        let draw = |rng: &mut ChaCha8Rng| {
            VehicleState::new(
                rng.random_range(self.position.0..self.position.1),
                rng.random_range(self.speed.0..self.speed.1),
            )
        };
        loop {
            let j = JointState::new(draw(rng), draw(rng));
            if j.distance() > radius {
                return j;
            }
        }
    }
}

/// Objective weights and planning horizon of the simulated driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HdvProfile {
    pub weights: IndividualWeights,
    pub w_shared: f64,
    /// Steps of the driver's best-response horizon.
    pub horizon: usize,
}

impl HdvProfile {
    pub fn new(weights: IndividualWeights, w_shared: f64) -> Self {
        Self { weights, w_shared, horizon: 10 }
    }

    /// Preset drivers: `altruistic` (ω₂ = 10⁻²·𝟙), `neutral` (𝟙) and
    /// `egoistic` (10²·𝟙), all with ω₁₂ = 10³.
    pub fn named(name: &str) -> Option<Self> {
        let w = match name {
            "altruistic" => 1e-2,
            "neutral" => 1.0,
            "egoistic" => 1e2,
            _ => return None,
        };
        Some(Self::new(IndividualWeights::new(w, w), 1e3))
    }

    pub fn theta(&self) -> [f64; 3] {
        [self.weights.w_accel, self.weights.w_speed_dev, self.w_shared]
    }

    /// Individual weights rescaled to a shared weight of `w_shared`.
    pub fn weights_normalized(&self, w_shared: f64) -> IndividualWeights {
        self.weights.scaled(w_shared / self.w_shared)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let ok = w.w_accel >= 0.0
            && w.w_speed_dev >= 0.0
            && w.w_accel + w.w_speed_dev > 0.0
            && w.w_accel.is_finite()
            && w.w_speed_dev.is_finite()
            && self.w_shared > 0.0
            && self.w_shared.is_finite()
            && self.horizon >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid HDV profile: {self:?}")))
        }
    }

    /// Log-uniform draw over `[10^lo, 10^hi]²` with the given shared weight.
    pub fn sample_log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64, w_shared: f64, horizon: usize) -> Self {
        let w = IndividualWeights::from_log10([rng.random_range(lo..hi), rng.random_range(lo..hi)]);
        Self { weights: w, w_shared, horizon }
    }
}

/// Maps the current HDV weight estimate (normalized to the MPC's shared
/// weight) to the CAV weights used by the MPC.
pub trait CavWeightPolicy: Sync {
    fn cav_weights(&self, hdv_estimate: &IndividualWeights) -> Result<IndividualWeights>;
}

/// Constant CAV weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedWeights(pub IndividualWeights);

impl CavWeightPolicy for FixedWeights {
    fn cav_weights(&self, _: &IndividualWeights) -> Result<IndividualWeights> {
        Ok(self.0)
    }
}

/// Everything a closed-loop run needs besides the initial state, HDV and policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub scenario: ScenarioConfig,
    pub mpc: MpcConfig,
    pub irl: IrlConfig,
    /// Learn the HDV weights online; otherwise the MPC uses the true ones.
    pub irl_enabled: bool,
    /// End the run once the CAV has left the control zone.
    pub stop_at_cav_exit: bool,
    /// Shared weight ω₁₂ of the MPC potential.
    pub w_shared: f64,
    /// Solver options of the simulated driver's best response.
    pub hdv_solver: SolverOptions,
    pub cost: TrueCostParams,
    pub fuel: FuelCoefficients,
    pub prior: InitialPrior,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            mpc: MpcConfig::default(),
            irl: IrlConfig::default(),
            irl_enabled: true,
            stop_at_cav_exit: false,
            w_shared: 1e3,
            hdv_solver: SolverOptions::default(),
            cost: TrueCostParams::default(),
            fuel: FuelCoefficients::default(),
            prior: InitialPrior::default(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.mpc.validate()?;
        self.irl.validate()?;
        self.hdv_solver.validate()?;
        self.cost.validate()?;
        self.fuel.validate()?;
        self.prior.validate()?;
        if !(self.w_shared > 0.0 && self.w_shared.is_finite()) {
            return Err(Error::Config("w_shared must be positive".into()));
        }
        Ok(())
    }
}

/// One logged sample: the state at `t` and the accelerations applied over
/// `[t, t + ΔT)` (absent on the final sample).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimStep {
    pub t: f64,
    pub cav: VehicleState,
    pub hdv: VehicleState,
    pub cav_accel: Option<f64>,
    pub hdv_accel: Option<f64>,
    pub distance: f64,
    pub degraded: bool,
    /// HDV weights assumed by the MPC at this step (normalized).
    pub hdv_model: Option<IndividualWeights>,
    /// CAV weights used by the MPC at this step.
    pub cav_weights: Option<IndividualWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub dt: f64,
    pub steps: Vec<SimStep>,
    /// CAV exit time t₁,f (max_sim_time on timeout).
    pub cav_exit_time: f64,
    pub hdv_exit_time: Option<f64>,
    pub min_distance: f64,
    /// The CAV did not leave the control zone in time.
    pub timeout: bool,
    pub degraded_steps: usize,
    pub estimates: Vec<(f64, ThetaEstimate)>,
}

impl SimTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "t", "p1", "v1", "a1", "p2", "v2", "a2", "distance", "degraded", "w1_accel", "w1_speed", "w2_accel_est",
            "w2_speed_est",
        ])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for s in &self.steps {
            out.write_record([
                s.t.to_string(),
                s.cav.position.to_string(),
                s.cav.speed.to_string(),
                opt(s.cav_accel),
                s.hdv.position.to_string(),
                s.hdv.speed.to_string(),
                opt(s.hdv_accel),
                s.distance.to_string(),
                s.degraded.to_string(),
                opt(s.cav_weights.map(|w| w.w_accel)),
                opt(s.cav_weights.map(|w| w.w_speed_dev)),
                opt(s.hdv_model.map(|w| w.w_accel)),
                opt(s.hdv_model.map(|w| w.w_speed_dev)),
            ])?;
        }
        out.flush()
    }

    /// IRL estimate trace: time, θ components, gradient norm, iterations.
    pub fn write_estimates_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "theta_accel", "theta_speed", "theta_shared", "gradient_norm", "iterations"])?;
        for (t, e) in &self.estimates {
            out.write_record([
                t.to_string(),
                e.theta[0].to_string(),
                e.theta[1].to_string(),
                e.theta[2].to_string(),
                e.gradient_norm.to_string(),
                e.iterations.to_string(),
            ])?;
        }
        out.flush()
    }
}

/// The HDV's first move of its best response to the CAV's published plan.
///
/// Returns the acceleration and the full response (for warm starting), or
/// `None` when the solve fails.
pub fn simulate_hdv_step(
    joint: &JointState,
    hdv: &HdvProfile,
    cav_plan: &[f64],
    scenario: &ScenarioConfig,
    solver: &SolverOptions,
    warm_start: Option<&[f64]>,
) -> Option<(ControlInput, Vec<f64>)> {
    let h = hdv.horizon;
    let last = cav_plan.last().copied().unwrap_or(0.0);
    let other: Vec<f64> = (0..h).map(|k| cav_plan.get(k).copied().unwrap_or(last)).collect();
    let init = match warm_start {
        Some(w) if w.len() == h => w.to_vec(),
        _ => vec![0.0; h],
    };
    let weights = WeightTuple {
        cav: IndividualWeights::new(0.0, 0.0),
        hdv: hdv.weights,
        shared: SharedWeight::new(hdv.w_shared, scenario.gamma),
    };
    match mpc::best_response(joint, Player::Hdv, &weights, &other, scenario, false, &init, solver) {
        Ok(r) if r.converged => Some((ControlInput::new(r.controls[0]), r.controls)),
        Ok(r) => {
            log::debug!("HDV best response did not converge (stationarity {:e})", r.stationarity);
            None
        }
        Err(e) => {
            log::debug!("HDV best response failed: {e}");
            None
        }
    }
}

/// Runs one closed-loop episode until both vehicles leave the control zone
/// or `max_sim_time` elapses.
pub fn run_simulation(
    init: &JointState,
    hdv: &HdvProfile,
    policy: &dyn CavWeightPolicy,
    config: &SimulationConfig,
) -> Result<SimTrace> {
    let sc = &config.scenario;
    hdv.validate()?;
    if !(init.distance() > sc.safety_radius) {
        return Err(Error::InvalidArgument(format!(
            "initial distance {} must exceed the safety radius {}",
            init.distance(),
            sc.safety_radius
        )));
    }
    let shared = SharedWeight::new(config.w_shared, sc.gamma);
    let true_model = hdv.weights_normalized(config.w_shared);
    let mut irl = config.irl_enabled.then(|| OnlineIrl::new(config.irl.clone()));
    let initial_model = match &irl {
        Some(est) => est.estimate().hdv_weights_normalized(config.w_shared),
        None => true_model,
    };
    let weights = WeightTuple { cav: policy.cav_weights(&initial_model)?, hdv: initial_model, shared };
    let mut controller = MpcController::new(sc.clone(), config.mpc.clone(), weights);

    let h = config.mpc.horizon;
    let mut published = vec![0.0; h];
    let mut hdv_plan: Option<Vec<f64>> = None;
    let mut hdv_prev = 0.0;
    let mut state = *init;
    let mut steps = Vec::new();
    let mut estimates = Vec::new();
    let mut cav_exit = (state.cav.position >= sc.control_zone_exit).then_some(0.0);
    let mut hdv_exit = (state.hdv.position >= sc.control_zone_exit).then_some(0.0);
    let n_max = (sc.max_sim_time / sc.dt).round() as usize;
    let mut min_distance = state.distance();
    let mut k = 0;
    let done = |c: Option<f64>, h: Option<f64>| c.is_some() && (h.is_some() || config.stop_at_cav_exit);
    while k < n_max && !done(cav_exit, hdv_exit) {
        let t = k as f64 * sc.dt;

        let hdv_model = match irl.as_mut() {
            Some(est) => {
                let e = *est.update(sc)?;
                if !est.buffer().is_empty() {
                    estimates.push((t, e));
                }
                e.hdv_weights_normalized(config.w_shared)
            }
            None => true_model,
        };
        let cav_w = policy.cav_weights(&hdv_model)?;
        controller.set_weights(WeightTuple { cav: cav_w, hdv: hdv_model, shared });

        let warm = hdv_plan.as_ref().map(|p| mpc::shift(p));
        let a2 = match simulate_hdv_step(&state, hdv, &published, sc, &config.hdv_solver, warm.as_deref()) {
            Some((u, plan)) => {
                hdv_plan = Some(plan);
                u.acceleration
            }
            None => {
                hdv_plan = None;
                hdv_prev
            }
        };

        let ctl = controller.step(&state);
        let a1 = ctl.input.acceleration;
        published = match (&ctl.plan, ctl.degraded) {
            (Some(p), false) => mpc::shift(&p.cav_controls),
            _ => vec![sc.u_min; h],
        };

        let next = JointState::new(step_unchecked(state.cav, a1, sc.dt), step_unchecked(state.hdv, a2, sc.dt));
        if cav_exit.is_none() {
            cav_exit = crossing_time(state.cav, a1, sc.dt, sc.control_zone_exit).map(|tau| t + tau);
        }
        if hdv_exit.is_none() {
            hdv_exit = crossing_time(state.hdv, a2, sc.dt, sc.control_zone_exit).map(|tau| t + tau);
        }
        steps.push(SimStep {
            t,
            cav: state.cav,
            hdv: state.hdv,
            cav_accel: Some(a1),
            hdv_accel: Some(a2),
            distance: state.distance(),
            degraded: ctl.degraded,
            hdv_model: Some(hdv_model),
            cav_weights: Some(cav_w),
        });
        if let Some(est) = irl.as_mut() {
            est.observe(TrajectorySegment {
                cav: state.cav,
                hdv: state.hdv,
                cav_next: next.cav,
                hdv_next: next.hdv,
                cav_input: ControlInput::new(a1),
                hdv_input: ControlInput::new(a2),
            });
        }
        hdv_prev = a2;
        state = next;
        min_distance = min_distance.min(state.distance());
        k += 1;
    }
    steps.push(SimStep {
        t: k as f64 * sc.dt,
        cav: state.cav,
        hdv: state.hdv,
        cav_accel: None,
        hdv_accel: None,
        distance: state.distance(),
        degraded: false,
        hdv_model: None,
        cav_weights: None,
    });
    Ok(SimTrace {
        dt: sc.dt,
        steps,
        cav_exit_time: cav_exit.unwrap_or(sc.max_sim_time),
        hdv_exit_time: hdv_exit,
        min_distance,
        timeout: cav_exit.is_none(),
        degraded_steps: controller.degraded_steps(),
        estimates,
    })
}

/// Fuel used by the CAV from 0 to its exit time (trapezoidal rule).
///
/// Each interval uses its logged acceleration at both ends; the interval
/// containing the exit time is truncated with linearly interpolated speed.
pub fn fuel_energy(trace: &SimTrace, coeffs: &FuelCoefficients) -> f64 {
    let t_end = trace.cav_exit_time;
    let mut e = 0.0;
    for w in trace.steps.windows(2) {
        let (s0, s1) = (&w[0], &w[1]);
        let Some(u) = s0.cav_accel else { break };
        if s0.t >= t_end {
            break;
        }
        let span = s1.t - s0.t;
        let (t1, v1) = if s1.t > t_end {
            let frac = (t_end - s0.t) / span;
            (t_end, s0.cav.speed + frac * (s1.cav.speed - s0.cav.speed))
        } else {
            (s1.t, s1.cav.speed)
        };
        e += 0.5 * (t1 - s0.t) * (coeffs.rate(s0.cav.speed, u) + coeffs.rate(v1, u));
    }
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueCostReport {
    pub exit_time: f64,
    pub energy: f64,
    pub min_distance: f64,
    pub time_term: f64,
    pub energy_term: f64,
    /// `λ·𝕀(d_min < r)`
    pub safety_term: f64,
    pub total: f64,
    /// `λ / (1 + exp(−ξ(r − d_min)))`
    pub smoothed_safety_term: f64,
    pub smoothed_total: f64,
    pub unsafe_flag: bool,
    pub timeout: bool,
}

impl TrueCostReport {
    /// Time and energy part only.
    pub fn time_energy(&self) -> f64 {
        self.time_term + self.energy_term
    }
}

/// Logistic `1 / (1 + e^{−x})` without overflow.
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn true_cost(trace: &SimTrace, params: &TrueCostParams, coeffs: &FuelCoefficients) -> TrueCostReport {
    let energy = fuel_energy(trace, coeffs);
    let g = params.safety_radius - trace.min_distance;
    let unsafe_flag = trace.min_distance < params.safety_radius;
    let time_term = params.alpha * trace.cav_exit_time;
    let energy_term = params.beta * energy;
    let safety_term = if unsafe_flag { params.lambda } else { 0.0 };
    let smoothed_safety_term = params.lambda * logistic(params.sigmoid_scale * g);
    TrueCostReport {
        exit_time: trace.cav_exit_time,
        energy,
        min_distance: trace.min_distance,
        time_term,
        energy_term,
        safety_term,
        total: time_term + energy_term + safety_term,
        smoothed_safety_term,
        smoothed_total: time_term + energy_term + smoothed_safety_term,
        unsafe_flag,
        timeout: trace.timeout,
    }
}

/// Per-run reports of a Monte Carlo batch, in run-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub reports: Vec<TrueCostReport>,
    /// Mean of the hard totals.
    pub mean: f64,
    /// Mean of the sigmoid-smoothed totals.
    pub mean_smoothed: f64,
    /// Standard error of `mean`.
    pub std_error: f64,
    pub failures: usize,
}

/// Closed-loop run `index` of a batch: initial state from stream `index` of `seed`.
pub fn monte_carlo_run(
    hdv: &HdvProfile,
    policy: &dyn CavWeightPolicy,
    config: &SimulationConfig,
    seed: u64,
    index: u64,
) -> Result<(JointState, SimTrace)> {
    let mut rng = stream_rng(seed, index);
    let init = config.prior.sample(&mut rng, config.scenario.safety_radius);
    Ok((init, run_simulation(&init, hdv, policy, config)?))
}

/// Averages the true cost over `n_s` runs with i.i.d. initial states.
///
/// Runs are executed in parallel and reduced in index order, so the result
/// depends only on `seed`. Failed runs are excluded and counted.
pub fn expected_true_cost(
    hdv: &HdvProfile,
    policy: &dyn CavWeightPolicy,
    config: &SimulationConfig,
    n_s: usize,
    seed: u64,
) -> Result<MonteCarloSummary> {
    if n_s == 0 {
        return Err(Error::InvalidArgument("n_s must be at least 1".into()));
    }
    // Past the exit the CAV is at least `control_zone_exit` from the conflict
    // point, so the rest of the run cannot change the cost.
    let early = config.scenario.control_zone_exit >= config.cost.safety_radius;
    let owned;
    let config = if early && !config.stop_at_cav_exit {
        owned = SimulationConfig { stop_at_cav_exit: true, ..config.clone() };
        &owned
    } else {
        config
    };
    let results: Vec<Result<TrueCostReport>> = (0..n_s as u64)
        .into_par_iter()
        .map(|i| {
            let (_, trace) = monte_carlo_run(hdv, policy, config, seed, i)?;
            Ok(true_cost(&trace, &config.cost, &config.fuel))
        })
        .collect();
    let mut reports = Vec::with_capacity(n_s);
    let mut failures = 0;
    for r in results {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => {
                log::warn!("Monte Carlo run failed: {e}");
                failures += 1;
            }
        }
    }
    if reports.is_empty() {
        return Err(Error::Evaluation(format!("all {n_s} runs failed")));
    }
    let n = reports.len() as f64;
    let mean = reports.iter().map(|r| r.total).sum::<f64>() / n;
    let mean_smoothed = reports.iter().map(|r| r.smoothed_total).sum::<f64>() / n;
    let var = if reports.len() > 1 {
        reports.iter().map(|r| (r.total - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(MonteCarloSummary { reports, mean, mean_smoothed, std_error: (var / n).sqrt(), failures })
}
